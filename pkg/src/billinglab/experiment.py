"""End-to-end experiment runs from a single flat JSON config.

A run executes, per seed: generate -> clean -> feature build -> scale
(train-partition fit) -> pseudo-label (fit on the chronological 80%
head, label everything) -> window per split -> train -> threshold
select on validation -> predict -> report. All artifacts land in a
per-seed directory; the run directory gets an aggregate report and a
manifest with a content hash for every file, so identical configs
reproduce byte-identical outputs.

The supervised test tail (last 20%) is disjoint from the unsupervised
fit range (first 80%) because both splits share one chronological
ordering; the manifest records the ranges and the run refuses to
proceed if they ever overlap.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from . import autoencoder as ae_mod
from . import classify, datagen, iforest, metrics, preprocess, stacking
from .errors import ArgumentError, BillingLabError, ComparisonError, ConfigError

MODELS = ("lstm", "transformer", "hybrid")


@dataclass
class ExperimentConfig:
    preset: str = "declaration"
    label_source: str = "iforest"
    model: str = "lstm"
    n_records: int = 5000
    n_clients: int = 20
    n_practitioners: int = 10
    start: str = "2023-01-01T00:00:00"
    end: str = "2024-12-31T00:00:00"
    anomaly_rate: float = 0.016
    anomaly_mix: dict[str, float] = field(
        default_factory=lambda: dict(datagen.DEFAULT_ANOMALY_MIX)
    )
    original_label_rate: float | None = None
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    out_dir: str = "runs/experiment"
    unsupervised_fit_fraction: float = 0.8
    fit_unsupervised_on_full: bool = False
    iforest_params: dict = field(default_factory=dict)
    ae_params: dict = field(default_factory=dict)
    train_overrides: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.label_source not in classify.LABEL_SOURCES:
            raise ConfigError(
                f"unknown label_source {self.label_source!r}; "
                f"expected one of {classify.LABEL_SOURCES}"
            )
        if not self.seeds:
            raise ConfigError("seeds list must not be empty")
        if not 0.0 < self.unsupervised_fit_fraction <= 1.0:
            raise ConfigError("unsupervised_fit_fraction must lie in (0, 1]")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown experiment config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_json(json.load(fh))

    def generator_config(self, seed: int) -> datagen.GeneratorConfig:
        return datagen.GeneratorConfig(
            n_records=self.n_records,
            preset=self.preset,
            n_clients=self.n_clients,
            n_practitioners=self.n_practitioners,
            start=datetime.fromisoformat(self.start),
            end=datetime.fromisoformat(self.end),
            anomaly_rate=self.anomaly_rate,
            anomaly_mix=dict(self.anomaly_mix),
            seed=seed,
        )


def _dump_json(doc: dict, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(path.read_bytes())
    return digest.hexdigest()


def _child_seeds(seed: int, n: int = 6) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


def write_labels_csv(labels: iforest.PseudoLabelSet, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row_index", "score", "label"])
        for i, (s, l) in enumerate(zip(labels.scores, labels.labels)):
            writer.writerow([i, repr(float(s)), int(l)])
    _dump_json(
        {
            "threshold": labels.threshold,
            "source": labels.source,
            "warning": labels.warning,
        },
        Path(str(path) + ".json"),
    )


def read_label_column(path: str | Path, column: str = "label") -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if column not in header:
            raise ArgumentError(f"{path}: no {column!r} column in {header}")
        j = header.index(column)
        values = [row[j] for row in reader]
    return np.array([int(float(v)) for v in values], dtype=np.int64)


def write_predictions_csv(
    path: Path,
    window_index: np.ndarray,
    source_row_index: np.ndarray,
    probabilities: np.ndarray,
    labels: np.ndarray,
    actual: np.ndarray,
    ground_truth: np.ndarray,
) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["window_index", "source_row_index", "probability", "label", "actual", "ground_truth"]
        )
        for i in range(len(labels)):
            writer.writerow(
                [
                    int(window_index[i]),
                    int(source_row_index[i]),
                    repr(float(probabilities[i])),
                    int(labels[i]),
                    int(actual[i]),
                    int(ground_truth[i]),
                ]
            )


# ----------------------------------------------------------------------
# pseudo-label production over the shared chronological ordering

def label_rows(
    config: ExperimentConfig,
    features: preprocess.FeatureMatrix,
    ground_truth: np.ndarray,
    seeds: list[int],
) -> tuple[np.ndarray, dict, iforest.PseudoLabelSet | None]:
    """Produce the per-row label vector for the configured source.

    Unsupervised sources fit on the chronological head (80% by default),
    take their threshold there, and label every row; 'original' uses the
    generator's ground truth, optionally thinned to mimic label scarcity.
    """
    n = features.n_rows
    fit_end = (
        n
        if config.fit_unsupervised_on_full
        else int(math.floor(config.unsupervised_fit_fraction * n))
    )
    info: dict = {"fit_rows": [0, fit_end]}

    if config.label_source == "original":
        if config.original_label_rate is None:
            labels = ground_truth.copy()
        else:
            rng = np.random.default_rng(seeds[4])
            want = int(math.floor(config.original_label_rate * n))
            anomaly_idx = np.flatnonzero(ground_truth)
            keep = (
                anomaly_idx
                if want >= len(anomaly_idx)
                else np.sort(rng.choice(anomaly_idx, size=want, replace=False))
            )
            labels = np.zeros(n, dtype=np.int8)
            labels[keep] = 1
        info["n_positive"] = int(labels.sum())
        return labels, info, None

    if config.label_source == "iforest":
        scaler = preprocess.fit_scaler(features, rows=slice(0, fit_end))
        matrix = preprocess.apply_scaler(features, scaler)
        model = iforest.fit_iforest(
            matrix.values[:fit_end], seed=seeds[1], **config.iforest_params
        )
        head = iforest.pseudo_label_iforest(model, matrix.values[:fit_end])
        if fit_end < n:
            tail = iforest.pseudo_label_iforest(model, matrix.values[fit_end:])
            scores = np.concatenate([head.scores, tail.scores])
            flat = np.concatenate([head.labels, tail.labels])
        else:
            scores, flat = head.scores, head.labels
        label_set = iforest.PseudoLabelSet(
            scores=scores,
            labels=flat,
            threshold=model.threshold,
            source="iforest",
            warning=head.warning,
        )
        info["threshold"] = model.threshold
        info["n_positive"] = int(flat.sum())
        return flat, info, label_set

    # autoencoder: every column rescaled into [0, 1] on the fit rows,
    # because the sigmoid decoder cannot express the cyclic columns' [-1, 1]
    scaler = preprocess.fit_scaler(
        features, rows=slice(0, fit_end), columns=list(features.column_names)
    )
    matrix = preprocess.apply_scaler(features, scaler)
    model = ae_mod.fit_ae(
        matrix.values[:fit_end], preset=config.preset, seed=seeds[2], **config.ae_params
    )
    label_set = ae_mod.pseudo_label_ae(model, matrix.values)
    info["threshold"] = model.error_threshold
    info["n_positive"] = int(label_set.labels.sum())
    return label_set.labels, info, label_set


# ----------------------------------------------------------------------

def _evaluate(predicted, actual, threshold, split, seed) -> metrics.EvalReport:
    report = metrics.compute_metrics(predicted, actual, threshold=threshold, split=split)
    report.seeds = [seed]
    return report


def run_seed(config: ExperimentConfig, seed: int, seed_dir: Path) -> dict:
    """One full pipeline pass; returns the per-seed report dict."""
    seed_dir.mkdir(parents=True, exist_ok=True)
    seeds = _child_seeds(seed)

    dataset = datagen.generate_dataset(config.generator_config(seeds[0]))
    datagen.write_csv(dataset, seed_dir / "dataset.csv")
    dataset = preprocess.clean(dataset)
    ground_truth = dataset.anomaly_labels
    n = len(dataset)

    features = preprocess.build_features(dataset)
    train_range, val_range, test_range = preprocess.chronological_split(n)

    labels, label_info, label_set = label_rows(config, features, ground_truth, seeds)
    if label_set is not None:
        write_labels_csv(label_set, seed_dir / f"labels_{config.label_source}.csv")

    # supervised matrix: scaler fitted on the training partition only
    scaler = preprocess.fit_scaler(features, rows=slice(0, train_range.stop))
    matrix = preprocess.apply_scaler(features, scaler)

    model_kinds = ["lstm", "transformer"] if config.model == "hybrid" else [config.model]
    report: dict = {
        "seed": seed,
        "preset": config.preset,
        "label_source": config.label_source,
        "labels": label_info,
        "models": {},
    }

    windows: dict[str, dict[str, preprocess.WindowedDataset]] = {}
    predictions: dict[str, dict[str, tuple[np.ndarray, np.ndarray]]] = {}
    for kind in model_kinds:
        cfg = classify.default_train_config(
            kind, config.preset, config.label_source, seed=seeds[3], **config.train_overrides
        )
        parts = {}
        for name, rows in (("train", train_range), ("val", val_range), ("test", test_range)):
            parts[name] = preprocess.make_windows(
                matrix.values[rows.start : rows.stop],
                labels[rows.start : rows.stop],
                cfg.window_size,
                row_offset=rows.start,
            )
        windows[kind] = parts
        if parts["train"].n_windows == 0 or parts["val"].n_windows == 0:
            raise ArgumentError(
                f"window size {cfg.window_size} leaves an empty split on {n} rows"
            )

        trained = classify.train_classifier(kind, parts["train"], parts["val"], cfg)
        classify.write_trace(trained.trace, seed_dir / f"trace_{kind}.csv")
        classify.save_classifier(trained, seed_dir / f"model_{kind}.json")

        val_probs, _ = classify.predict(trained, parts["val"])
        threshold = classify.select_threshold(val_probs, parts["val"].labels)
        model_report = {
            "threshold": threshold,
            "epochs_run": len(trained.trace),
            "warnings": trained.warnings,
            "metrics": {},
        }
        predictions[kind] = {}
        for split_name in ("val", "test"):
            split = parts[split_name]
            probs, pred = classify.predict(trained, split, threshold)
            gt = ground_truth[split.source_row_index]
            predictions[kind][split_name] = (probs, pred)
            write_predictions_csv(
                seed_dir / f"predictions_{kind}_{split_name}.csv",
                np.arange(split.n_windows),
                split.source_row_index,
                probs,
                pred,
                split.labels,
                gt,
            )
            model_report["metrics"][split_name] = _evaluate(
                pred, split.labels, threshold, split_name, seed
            ).to_json()
            model_report["metrics"][f"{split_name}_vs_ground_truth"] = _evaluate(
                pred, gt, threshold, split_name, seed
            ).to_json()
        report["models"][kind] = model_report

    if config.model == "hybrid":
        val_parts = windows["lstm"]["val"]
        test_parts = windows["lstm"]["test"]
        if windows["transformer"]["val"].n_windows != val_parts.n_windows:
            raise ArgumentError(
                "hybrid base models must share a window size; "
                "set train_overrides.window_size explicitly"
            )
        ensemble = stacking.fit_meta(
            predictions["lstm"]["val"][1],
            predictions["transformer"]["val"][1],
            val_parts.labels,
            trained_on=config.label_source,
        )
        _dump_json(stacking.ensemble_to_json(ensemble), seed_dir / "ensemble.json")
        hybrid_report = {"warnings": ensemble.warnings, "metrics": {}}
        for split_name, part in (("val", val_parts), ("test", test_parts)):
            pred = stacking.predict_meta(
                ensemble,
                predictions["lstm"][split_name][1],
                predictions["transformer"][split_name][1],
            )
            gt = ground_truth[part.source_row_index]
            write_predictions_csv(
                seed_dir / f"predictions_hybrid_{split_name}.csv",
                np.arange(part.n_windows),
                part.source_row_index,
                pred.astype(np.float64),
                pred,
                part.labels,
                gt,
            )
            hybrid_report["metrics"][split_name] = _evaluate(
                pred, part.labels, None, split_name, seed
            ).to_json()
            hybrid_report["metrics"][f"{split_name}_vs_ground_truth"] = _evaluate(
                pred, gt, None, split_name, seed
            ).to_json()
        report["models"]["hybrid"] = hybrid_report

    report["splits"] = {
        "train_rows": [train_range.start, train_range.stop],
        "val_rows": [val_range.start, val_range.stop],
        "test_rows": [test_range.start, test_range.stop],
        "unsupervised_fit_rows": label_info["fit_rows"],
    }
    fit_end = label_info["fit_rows"][1]
    if fit_end > test_range.start and not config.fit_unsupervised_on_full:
        raise ArgumentError(
            f"split discipline violated: unsupervised fit rows reach {fit_end}, "
            f"test rows start at {test_range.start}"
        )
    _dump_json(report, seed_dir / "report.json")
    return report


METRIC_NAMES = ("accuracy", "precision", "recall", "f1")


def aggregate_reports(per_seed: list[dict]) -> dict:
    """Mean and std (population) of each metric across seeds."""
    out: dict = {"seeds": [r["seed"] for r in per_seed], "models": {}}
    model_names = per_seed[0]["models"].keys()
    for name in model_names:
        split_names = per_seed[0]["models"][name]["metrics"].keys()
        out["models"][name] = {}
        for split in split_names:
            stats = {}
            for metric in METRIC_NAMES:
                values = [r["models"][name]["metrics"][split][metric] for r in per_seed]
                stats[metric] = {
                    "mean": float(np.mean(values)),
                    "std": float(np.std(values)),
                }
            out["models"][name][split] = stats
    return out


def aggregate_table(aggregate: dict) -> str:
    lines = []
    header = (
        f"{'Model / split':<34} {'Accuracy':>14} {'Precision':>14} {'Recall':>14} {'F1':>14}"
    )
    lines.append(header)
    lines.append("-" * len(header))
    for model_name, splits in aggregate["models"].items():
        for split, stats in splits.items():
            cells = [
                f"{stats[m]['mean']:.3f}±{stats[m]['std']:.3f}" for m in METRIC_NAMES
            ]
            lines.append(
                f"{model_name + ' / ' + split:<34} "
                + " ".join(f"{c:>14}" for c in cells)
            )
    return "\n".join(lines) + "\n"


def run_experiment(config: ExperimentConfig, out_dir: str | Path | None = None) -> Path:
    """Execute every seed, aggregate, and write the manifest.

    Any stage failure is recorded in the manifest under ``failed_stage``
    before the error propagates.
    """
    config.validate()
    run_dir = Path(out_dir) if out_dir is not None else Path(config.out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    _dump_json(config.to_json(), run_dir / "config.json")

    manifest: dict = {"config": config.to_json(), "files": {}, "failed_stage": None}
    stage = "generate"
    try:
        per_seed = []
        for seed in config.seeds:
            stage = f"seed_{seed}"
            per_seed.append(run_seed(config, seed, run_dir / f"seed_{seed}"))
        stage = "aggregate"
        aggregate = aggregate_reports(per_seed)
        _dump_json(aggregate, run_dir / "aggregate_report.json")
        (run_dir / "aggregate_report.txt").write_text(aggregate_table(aggregate))
    except BillingLabError as exc:
        manifest["failed_stage"] = stage
        manifest["error"] = str(exc)
        _dump_json(manifest, run_dir / "manifest.json")
        exc.args = (f"stage {stage}: {exc}",)
        raise

    stage = "manifest"
    for path in sorted(run_dir.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            manifest["files"][str(path.relative_to(run_dir))] = sha256_file(path)
    _dump_json(manifest, run_dir / "manifest.json")
    verify_manifest(run_dir)
    return run_dir


def verify_manifest(run_dir: str | Path) -> None:
    """Re-hash every listed file and fail loudly on drift."""
    run_dir = Path(run_dir)
    with open(run_dir / "manifest.json") as fh:
        manifest = json.load(fh)
    for rel, expected in manifest["files"].items():
        actual = sha256_file(run_dir / rel)
        if actual != expected:
            raise BillingLabError(f"manifest hash mismatch for {rel}")


# ----------------------------------------------------------------------

def _load_run(run_dir: Path) -> tuple[ExperimentConfig, dict]:
    try:
        config = ExperimentConfig.load(run_dir / "config.json")
        with open(run_dir / "aggregate_report.json") as fh:
            aggregate = json.load(fh)
    except FileNotFoundError as exc:
        raise ComparisonError(f"{run_dir} is not a completed run: {exc}") from None
    return config, aggregate


def compare(run_a: str | Path, run_b: str | Path) -> dict:
    """McNemar per shared seed on the runs' test predictions, plus a
    side-by-side aggregate table. Runs must share preset, label source,
    seeds, and the exact test split."""
    run_a, run_b = Path(run_a), Path(run_b)
    config_a, agg_a = _load_run(run_a)
    config_b, agg_b = _load_run(run_b)
    for attr in ("preset", "label_source", "seeds", "n_records", "anomaly_rate"):
        if getattr(config_a, attr) != getattr(config_b, attr):
            raise ComparisonError(
                f"runs differ on {attr}: {getattr(config_a, attr)!r} vs {getattr(config_b, attr)!r}"
            )

    model_a = config_a.model
    model_b = config_b.model
    tests = []
    for seed in config_a.seeds:
        path_a = run_a / f"seed_{seed}" / f"predictions_{model_a}_test.csv"
        path_b = run_b / f"seed_{seed}" / f"predictions_{model_b}_test.csv"
        preds_a = read_label_column(path_a)
        preds_b = read_label_column(path_b)
        actual_a = read_label_column(path_a, "actual")
        actual_b = read_label_column(path_b, "actual")
        rows_a = read_label_column(path_a, "source_row_index")
        rows_b = read_label_column(path_b, "source_row_index")
        if len(actual_a) != len(actual_b) or not np.array_equal(actual_a, actual_b) or not np.array_equal(rows_a, rows_b):
            raise ComparisonError(f"test splits differ for seed {seed}")
        tests.append({"seed": seed, "mcnemar": metrics.mcnemar(preds_a, preds_b, actual_a).to_json()})

    side_by_side = {
        f"A:{model_a}": agg_a["models"][model_a],
        f"B:{model_b}": agg_b["models"][model_b],
    }
    return {
        "run_a": str(run_a),
        "run_b": str(run_b),
        "mcnemar_per_seed": tests,
        "aggregate": side_by_side,
    }


def compare_table(result: dict) -> str:
    lines = [f"A = {result['run_a']}", f"B = {result['run_b']}", ""]
    for entry in result["mcnemar_per_seed"]:
        m = entry["mcnemar"]
        lines.append(
            f"seed {entry['seed']}: b={m['b']} c={m['c']} "
            f"statistic={m['statistic']:.4f} p={m['p_value']:.4f} "
            f"significant={'yes' if m['significant'] else 'no'}"
        )
    lines.append("")
    lines.append(aggregate_table({"models": result["aggregate"]}))
    return "\n".join(lines)
