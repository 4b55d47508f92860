"""Training machinery shared by every neural model: the weighted
binary cross-entropy loss, Adam/RMSprop with coupled L2 weight decay,
the two learning-rate schedulers, early stopping with best-snapshot
restore, and JSON parameter serialization."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ArgumentError, ShapeError, TrainingDivergedError


def weighted_bce(logits: Tensor, targets: np.ndarray, pos_weight: float = 1.0) -> Tensor:
    """Mean of -[w*y*log s(z) + (1-y)*log(1-s(z))] over the batch.

    Computed as w*y*softplus(-z) + (1-y)*softplus(z), which stays finite
    for any finite logit.
    """
    if pos_weight <= 0:
        raise ArgumentError(f"pos_weight must be positive, got {pos_weight}")
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != logits.data.shape:
        raise ShapeError(f"targets shape {y.shape} vs logits shape {logits.data.shape}")
    pos = ad.mul(ad.softplus(ad.neg(logits)), pos_weight * y)
    negt = ad.mul(ad.softplus(logits), 1.0 - y)
    return ad.mean(ad.add(pos, negt))


def init_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) parameter tensor."""
    limit = 1.0 / np.sqrt(max(fan_in, 1))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def zeros_param(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Optimizer:
    """Adam or RMSprop with coupled L2 weight decay (decay added to the
    raw gradient before the moment updates)."""

    def __init__(
        self,
        params: dict[str, Tensor],
        kind: str = "adam",
        learning_rate: float = 1e-3,
        weight_decay: float = 0.0,
        beta1: float = 0.9,
        beta2: float = 0.999,
        rms_decay: float = 0.9,
        eps: float = 1e-8,
    ):
        if kind not in ("adam", "rmsprop"):
            raise ArgumentError(f"unknown optimizer kind {kind!r}")
        self.kind = kind
        self.params = params
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = beta1, beta2
        self.rms_decay = rms_decay
        self.eps = eps
        self.t = 0
        self._m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self._v = {n: np.zeros_like(p.data) for n, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise TrainingDivergedError(f"non-finite gradient in parameter {name!r}")
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            if self.kind == "adam":
                m = self._m[name] = self.beta1 * self._m[name] + (1 - self.beta1) * g
                v = self._v[name] = self.beta2 * self._v[name] + (1 - self.beta2) * g * g
                m_hat = m / (1 - self.beta1**self.t)
                v_hat = v / (1 - self.beta2**self.t)
                p.data -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
            else:
                v = self._v[name] = self.rms_decay * self._v[name] + (1 - self.rms_decay) * g * g
                p.data -= self.learning_rate * g / np.sqrt(v + self.eps)


class ReduceOnPlateau:
    """Halve the learning rate after ``patience`` consecutive epochs
    without validation-loss improvement."""

    def __init__(self, optimizer: Optimizer, factor: float = 0.5, patience: int = 5):
        self.optimizer = optimizer
        self.factor = factor
        self.patience = patience
        self.best = np.inf
        self.bad_epochs = 0

    def step(self, val_loss: float) -> None:
        if val_loss < self.best:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.optimizer.learning_rate *= self.factor
                self.bad_epochs = 0


class HalveEachEpoch:
    def __init__(self, optimizer: Optimizer):
        self.optimizer = optimizer

    def step(self, val_loss: float | None = None) -> None:
        self.optimizer.learning_rate *= 0.5


class EarlyStopper:
    """Track the best validation loss, snapshot its parameters, and stop
    after ``patience`` consecutive stagnant epochs (patience 0 stops on
    the first one)."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_loss = np.inf
        self.epochs_since_best = 0
        self.best_snapshot: dict[str, np.ndarray] | None = None

    def update(self, val_loss: float, params: dict[str, Tensor]) -> bool:
        """Returns True when training should stop."""
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.epochs_since_best = 0
            self.best_snapshot = {n: p.data.copy() for n, p in params.items()}
            return False
        self.epochs_since_best += 1
        return self.epochs_since_best >= max(self.patience, 1)

    def restore(self, params: dict[str, Tensor]) -> None:
        if self.best_snapshot is None:
            return
        for name, p in params.items():
            p.data = self.best_snapshot[name].copy()


def sequential_batches(n: int, batch_size: int, shuffle: bool = False, rng=None):
    """Yield index arrays over chronologically ordered rows. Order is
    preserved by default; shuffling is opt-in."""
    order = np.arange(n)
    if shuffle:
        if rng is None:
            rng = np.random.default_rng()
        rng.shuffle(order)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def params_to_json(params: dict[str, Tensor]) -> dict:
    return {
        name: {"shape": list(p.data.shape), "data": [float(v) for v in p.data.ravel()]}
        for name, p in params.items()
    }


def params_from_json(blob: dict) -> dict[str, Tensor]:
    out = {}
    for name, entry in blob.items():
        arr = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        out[name] = Tensor(arr, requires_grad=True)
    return out


def save_params(params: dict[str, Tensor], path: str | Path, extra: dict | None = None) -> None:
    doc = {"params": params_to_json(params)}
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_params(path: str | Path) -> tuple[dict[str, Tensor], dict]:
    with open(path) as fh:
        doc = json.load(fh)
    params = params_from_json(doc.pop("params"))
    return params, doc
