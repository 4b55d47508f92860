"""Supervised training of the sequence classifiers on windowed data.

Both model kinds minimize weighted binary cross-entropy over
chronologically ordered mini-batches (no shuffling unless asked);
the transformer can add the association-discrepancy term with a
nonzero weight. LSTMs anneal with reduce-on-plateau, transformers
halve the learning rate every epoch, and both restore the parameters
of the best validation epoch on early stop.

Hyperparameter defaults are resolved per (model, preset, label-source)
from the experiment tables in ``DEFAULT_CONFIGS``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import nnet
from .errors import ArgumentError
from .lstm import LstmClassifier
from .preprocess import WindowedDataset
from .transformer import AnomalyTransformerClassifier, association_discrepancy

MODEL_KINDS = ("lstm", "transformer")
LABEL_SOURCES = ("iforest", "ae", "original")


@dataclass
class TrainConfig:
    window_size: int = 100
    batch_size: int = 64
    pos_weight: float = 30.0
    learning_rate: float = 0.005
    weight_decay: float = 0.001
    patience: int = 7
    max_epochs: int = 50
    scheduler: str = "reduce_on_plateau"
    dropout: float = 0.5
    seed: int = 0
    num_layers: int = 2
    lambda_discrepancy: float = 0.0
    shuffle: bool = False

    def to_json(self) -> dict:
        return asdict(self)


# (model, preset, label_source) -> overrides on top of TrainConfig defaults
DEFAULT_CONFIGS: dict[tuple[str, str, str], dict] = {
    ("lstm", "declaration", "ae"): dict(window_size=100, pos_weight=30, learning_rate=0.005),
    ("lstm", "declaration", "iforest"): dict(window_size=100, pos_weight=30, learning_rate=0.005),
    ("lstm", "declaration", "original"): dict(
        window_size=100, pos_weight=10, learning_rate=0.005, num_layers=1, dropout=0.0
    ),
    ("lstm", "operation", "ae"): dict(window_size=50, pos_weight=30, learning_rate=0.0005),
    ("lstm", "operation", "iforest"): dict(window_size=50, pos_weight=30, learning_rate=0.0005),
    ("lstm", "operation", "original"): dict(window_size=100, pos_weight=10, learning_rate=0.0005),
    ("transformer", "declaration", "ae"): dict(
        window_size=100, pos_weight=40, learning_rate=0.0001, patience=5
    ),
    ("transformer", "declaration", "iforest"): dict(
        window_size=100, pos_weight=40, learning_rate=0.0001, patience=5
    ),
    ("transformer", "declaration", "original"): dict(
        window_size=100, pos_weight=20, learning_rate=0.0001, patience=10
    ),
    ("transformer", "operation", "ae"): dict(
        window_size=50, pos_weight=20, learning_rate=0.0001, patience=10
    ),
    ("transformer", "operation", "iforest"): dict(
        window_size=50, pos_weight=20, learning_rate=0.0001, patience=10
    ),
    ("transformer", "operation", "original"): dict(
        window_size=100, pos_weight=10, learning_rate=0.0005, patience=10
    ),
}


def default_train_config(model_kind: str, preset: str, label_source: str, **overrides) -> TrainConfig:
    key = (model_kind, preset, label_source)
    if key not in DEFAULT_CONFIGS:
        raise ArgumentError(f"no default hyperparameters for combination {key}")
    base = dict(DEFAULT_CONFIGS[key])
    if model_kind == "transformer":
        base.setdefault("scheduler", "halve_each_epoch")
        base.setdefault("dropout", 0.0)
        base.setdefault("weight_decay", 0.0)
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    learning_rate: float


@dataclass
class TrainedClassifier:
    kind: str
    model: object
    config: TrainConfig
    trace: list[EpochStats] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def params(self) -> dict:
        return self.model.params


def build_model(kind: str, input_size: int, config: TrainConfig):
    if kind == "lstm":
        return LstmClassifier(
            input_size,
            num_layers=config.num_layers,
            dropout=config.dropout,
            seed=config.seed,
        )
    if kind == "transformer":
        return AnomalyTransformerClassifier(input_size, seed=config.seed)
    raise ArgumentError(f"unknown model kind {kind!r}")


def _batch_loss(kind: str, model, windows, labels, config, train, rng):
    if kind == "transformer":
        logits, priors, series = model.forward(windows, return_associations=True)
        loss = nnet.weighted_bce(logits, labels, config.pos_weight)
        if config.lambda_discrepancy:
            disc = association_discrepancy(priors, series)
            loss = ad.add(loss, ad.mul(disc, config.lambda_discrepancy))
        return loss
    logits = model.forward(windows, train=train, rng=rng)
    return nnet.weighted_bce(logits, labels, config.pos_weight)


def _epoch_loss(kind: str, model, data: WindowedDataset, config: TrainConfig) -> float:
    total, count = 0.0, 0
    for batch in nnet.sequential_batches(data.n_windows, config.batch_size):
        loss = _batch_loss(
            kind, model, data.windows[batch], data.labels[batch], config, False, None
        )
        total += float(loss.data) * len(batch)
        count += len(batch)
    return total / max(count, 1)


def train_classifier(
    model_kind: str,
    train_data: WindowedDataset,
    val_data: WindowedDataset,
    config: TrainConfig,
) -> TrainedClassifier:
    """Fit a classifier and return it with its per-epoch trace.

    The returned model carries the parameters of the epoch with the
    lowest validation loss. ``max_epochs=0`` returns the initialized
    model untouched with an empty trace.
    """
    if model_kind not in MODEL_KINDS:
        raise ArgumentError(f"unknown model kind {model_kind!r}")
    if train_data.n_windows == 0:
        raise ArgumentError("no training windows (input shorter than the window size?)")
    input_size = train_data.windows.shape[2]
    model = build_model(model_kind, input_size, config)
    result = TrainedClassifier(kind=model_kind, model=model, config=config)
    if int(np.sum(train_data.labels)) == 0:
        result.warnings.append(
            "degenerate labels: no positive examples in the training windows"
        )
    if config.max_epochs == 0:
        return result

    seq = np.random.SeedSequence(config.seed)
    dropout_rng = np.random.default_rng(seq.spawn(2)[0])
    shuffle_rng = np.random.default_rng(seq.spawn(3)[2])
    optimizer = nnet.Optimizer(
        model.params,
        kind="adam",
        learning_rate=config.learning_rate,
        weight_decay=config.weight_decay,
    )
    if config.scheduler == "reduce_on_plateau":
        scheduler = nnet.ReduceOnPlateau(optimizer)
    elif config.scheduler == "halve_each_epoch":
        scheduler = nnet.HalveEachEpoch(optimizer)
    elif config.scheduler in (None, "none"):
        scheduler = None
    else:
        raise ArgumentError(f"unknown scheduler {config.scheduler!r}")
    stopper = nnet.EarlyStopper(config.patience)

    for epoch in range(1, config.max_epochs + 1):
        lr_in_effect = optimizer.learning_rate
        total, count = 0.0, 0
        for batch in nnet.sequential_batches(
            train_data.n_windows, config.batch_size, config.shuffle, shuffle_rng
        ):
            loss = _batch_loss(
                model_kind,
                model,
                train_data.windows[batch],
                train_data.labels[batch],
                config,
                True,
                dropout_rng,
            )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss.data) * len(batch)
            count += len(batch)
        train_loss = total / max(count, 1)
        val_loss = (
            _epoch_loss(model_kind, model, val_data, config)
            if val_data.n_windows
            else train_loss
        )
        result.trace.append(EpochStats(epoch, train_loss, val_loss, lr_in_effect))
        if scheduler is not None:
            scheduler.step(val_loss)
        if stopper.update(val_loss, model.params):
            break
    stopper.restore(model.params)
    return result


def predict(
    classifier: TrainedClassifier, data: WindowedDataset, threshold: float = 0.5
) -> tuple[np.ndarray, np.ndarray]:
    """Sigmoid probabilities and thresholded labels (p >= threshold)."""
    probs = np.empty(data.n_windows)
    for batch in nnet.sequential_batches(data.n_windows, classifier.config.batch_size):
        logits = classifier.model.forward(data.windows[batch])
        probs[batch] = 1.0 / (1.0 + np.exp(-logits.data))
    labels = (probs >= threshold).astype(np.int8)
    return probs, labels


def select_threshold(probabilities: np.ndarray, labels: np.ndarray) -> float:
    """Best-F1 threshold over the distinct predicted probabilities.

    Falls back to 0.5 when the labels contain no positives or every
    candidate scores zero F1. Ties keep the lowest candidate.
    """
    probabilities = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels)
    if probabilities.shape != labels.shape:
        raise ArgumentError(
            f"probabilities shape {probabilities.shape} vs labels shape {labels.shape}"
        )
    if labels.sum() == 0:
        return 0.5
    best_f1, best_threshold = 0.0, 0.5
    for candidate in np.unique(probabilities):
        predicted = probabilities >= candidate
        tp = int(np.sum(predicted & (labels == 1)))
        fp = int(np.sum(predicted & (labels == 0)))
        fn = int(np.sum(~predicted & (labels == 1)))
        denom = 2 * tp + fp + fn
        f1 = 2 * tp / denom if denom else 0.0
        if f1 > best_f1:
            best_f1, best_threshold = f1, float(candidate)
    return best_threshold if best_f1 > 0 else 0.5


# ----------------------------------------------------------------------
# artifacts

def write_trace(trace: list[EpochStats], path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,train_loss,val_loss,lr\n")
        for row in trace:
            fh.write(
                f"{row.epoch},{row.train_loss!r},{row.val_loss!r},{row.learning_rate!r}\n"
            )


def save_classifier(classifier: TrainedClassifier, path: str | Path) -> None:
    nnet.save_params(
        classifier.model.params,
        path,
        extra={
            "kind": classifier.kind,
            "config": classifier.config.to_json(),
            "warnings": classifier.warnings,
        },
    )


def load_classifier(path: str | Path) -> TrainedClassifier:
    params, extra = nnet.load_params(path)
    config = TrainConfig(**extra["config"])
    input_size = params["W_embed"].data.shape[0] if extra["kind"] == "transformer" else params["Wx0"].data.shape[0]
    model = build_model(extra["kind"], input_size, config)
    for name, tensor in params.items():
        model.params[name].data = tensor.data
    out = TrainedClassifier(kind=extra["kind"], model=model, config=config)
    out.warnings = list(extra.get("warnings", []))
    return out


def clone_config(config: TrainConfig, **overrides) -> TrainConfig:
    return replace(config, **overrides)
