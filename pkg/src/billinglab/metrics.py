"""Evaluation: confusion-matrix metrics, McNemar's paired test, the
pseudo-label agreement report, and top-anomaly feature summaries.

Zero-denominator metrics return 0 rather than NaN, matching how failed
classifiers are conventionally tabulated. McNemar uses the
continuity-corrected statistic (|b - c| - 1)^2 / (b + c) with the
chi-squared(1) survival function p = erfc(sqrt(stat / 2))."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .datagen import BillingRecord
from .errors import ArgumentError

SIGNIFICANCE_LEVEL = 0.05

SUMMARY_FIELDS = (
    "amount_submitted",
    "amount_accepted",
    "amount_insured",
    "total_ops_accepted",
    "total_ops_stopped",
)


@dataclass
class EvalReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float | None = None
    seeds: list[int] = field(default_factory=list)
    split: str = ""

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "confusion": {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn},
            "threshold": self.threshold,
            "seeds": self.seeds,
            "split": self.split,
        }


@dataclass
class McNemarResult:
    b: int  # A wrong, B right
    c: int  # A right, B wrong
    statistic: float
    p_value: float
    significant: bool

    def to_json(self) -> dict:
        return {
            "b": self.b,
            "c": self.c,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "significant": self.significant,
        }


@dataclass
class AgreementReport:
    counts: dict[str, int]
    percentages: dict[str, float]

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def to_json(self) -> dict:
        return {"counts": self.counts, "percentages": self.percentages, "total": self.total}


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def compute_metrics(predicted, actual, threshold=None, split="") -> EvalReport:
    predicted = np.asarray(predicted).astype(np.int8)
    actual = np.asarray(actual).astype(np.int8)
    if predicted.shape != actual.shape or predicted.ndim != 1:
        raise ArgumentError(f"shape mismatch: {predicted.shape} vs {actual.shape}")
    if predicted.size == 0:
        raise ArgumentError("cannot evaluate empty prediction vectors")
    tp = int(np.sum((predicted == 1) & (actual == 1)))
    fp = int(np.sum((predicted == 1) & (actual == 0)))
    tn = int(np.sum((predicted == 0) & (actual == 0)))
    fn = int(np.sum((predicted == 0) & (actual == 1)))
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    return EvalReport(
        accuracy=_ratio(tp + tn, tp + fp + tn + fn),
        precision=precision,
        recall=recall,
        f1=_ratio(2 * precision * recall, precision + recall),
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        threshold=threshold,
        split=split,
    )


def mcnemar(preds_a, preds_b, actual) -> McNemarResult:
    """Continuity-corrected McNemar on the discordant error cells."""
    preds_a = np.asarray(preds_a).astype(np.int8)
    preds_b = np.asarray(preds_b).astype(np.int8)
    actual = np.asarray(actual).astype(np.int8)
    if not (preds_a.shape == preds_b.shape == actual.shape):
        raise ArgumentError(
            f"length mismatch: {preds_a.shape}, {preds_b.shape}, {actual.shape}"
        )
    a_right = preds_a == actual
    b_right = preds_b == actual
    b_cell = int(np.sum(~a_right & b_right))
    c_cell = int(np.sum(a_right & ~b_right))
    if b_cell + c_cell == 0:
        statistic, p_value = 0.0, 1.0
    else:
        statistic = (abs(b_cell - c_cell) - 1) ** 2 / (b_cell + c_cell)
        p_value = math.erfc(math.sqrt(statistic / 2.0))
    return McNemarResult(
        b=b_cell,
        c=c_cell,
        statistic=float(statistic),
        p_value=float(p_value),
        significant=p_value < SIGNIFICANCE_LEVEL,
    )


AGREEMENT_CELLS = ("both_1", "both_0", "iforest_only", "ae_only")


def agreement_report(iforest_labels, ae_labels) -> AgreementReport:
    """Four-cell contingency of the two pseudo-label vectors, with
    percentages rounded to two decimals."""
    a = np.asarray(iforest_labels).astype(np.int8)
    b = np.asarray(ae_labels).astype(np.int8)
    if a.shape != b.shape:
        raise ArgumentError(f"length mismatch: {a.shape} vs {b.shape}")
    counts = {
        "both_1": int(np.sum((a == 1) & (b == 1))),
        "both_0": int(np.sum((a == 0) & (b == 0))),
        "iforest_only": int(np.sum((a == 1) & (b == 0))),
        "ae_only": int(np.sum((a == 0) & (b == 1))),
    }
    n = len(a)
    percentages = {k: round(100.0 * v / n, 2) if n else 0.0 for k, v in counts.items()}
    return AgreementReport(counts=counts, percentages=percentages)


def top_anomaly_summary(
    scores: np.ndarray,
    records: list[BillingRecord],
    k: int = 10,
    source: str = "iforest",
) -> dict[str, dict[str, float]]:
    """Mean/std/min/max of the raw billing features over the k most
    anomalous rows (lowest decision scores for the forest, highest
    errors for the autoencoder). Std is the population value."""
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) != len(records):
        raise ArgumentError(f"{len(scores)} scores vs {len(records)} records")
    if k > len(records):
        raise ArgumentError(f"k={k} exceeds n={len(records)}")
    order = np.argsort(scores, kind="stable")
    chosen = order[:k] if source == "iforest" else order[::-1][:k]
    summary: dict[str, dict[str, float]] = {}
    values = {"score": scores[chosen]}
    for name in SUMMARY_FIELDS:
        values[name] = np.array([float(getattr(records[i], name)) for i in chosen])
    for name, col in values.items():
        summary[name] = {
            "mean": float(col.mean()),
            "std": float(col.std()),
            "min": float(col.min()),
            "max": float(col.max()),
        }
    return summary


# ----------------------------------------------------------------------
# text tables

def metrics_table(rows: dict[str, EvalReport]) -> str:
    """Aligned-column table in the shape of the usual results tables."""
    header = f"{'Classifier':<28} {'Accuracy':>9} {'Precision':>10} {'Recall':>8} {'F1':>8}"
    lines = [header, "-" * len(header)]
    for name, rep in rows.items():
        lines.append(
            f"{name:<28} {rep.accuracy:>9.3f} {rep.precision:>10.3f} "
            f"{rep.recall:>8.3f} {rep.f1:>8.3f}"
        )
    return "\n".join(lines) + "\n"


def agreement_table(report: AgreementReport) -> str:
    header = f"{'Label combination':<22} {'Count':>10} {'Percentage':>11}"
    lines = [header, "-" * len(header)]
    names = {
        "both_1": "Both label 1",
        "both_0": "Both label 0",
        "iforest_only": "iForest 1 and AE 0",
        "ae_only": "iForest 0 and AE 1",
    }
    for cell in AGREEMENT_CELLS:
        lines.append(
            f"{names[cell]:<22} {report.counts[cell]:>10,} {report.percentages[cell]:>10.2f}%"
        )
    lines.append(f"{'Total':<22} {report.total:>10,} {'100%':>11}")
    return "\n".join(lines) + "\n"


def mcnemar_table(result: McNemarResult) -> str:
    return (
        f"b (A wrong, B right): {result.b}\n"
        f"c (A right, B wrong): {result.c}\n"
        f"statistic: {result.statistic:.6f}\n"
        f"p-value: {result.p_value:.6f}\n"
        f"significant at {SIGNIFICANCE_LEVEL}: {'yes' if result.significant else 'no'}\n"
    )
