"""Raw billing rows -> numeric feature matrices -> sliding windows.

Timestamps expand into sine/cosine pairs per calendar field (the year
stays numeric), amounts and counts are min-max scaled with parameters
fitted on the training partition only, and categoricals are one-hot
encoded over their schema vocabularies plus an explicit unknown slot.
Sliding windows are contiguous stride-1 slices labeled by their final
timestep; partitions shorter than the window yield an empty result
instead of zero-padding.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path

import numpy as np

from . import datagen
from .datagen import BillingDataset, BillingRecord
from .errors import ArgumentError, SchemaError

CYCLE_PERIODS = {
    "month": 12,
    "day": 31,
    "day_of_week": 7,
    "hour": 24,
    "minute": 60,
    "second": 60,
}

KIND_NUMERIC = "numeric_scaled"
KIND_SIN = "cyclic_sin"
KIND_COS = "cyclic_cos"
KIND_ONEHOT = "onehot"
KIND_YEAR = "raw_year"

UNKNOWN = "<unknown>"

# Column kinds the standard scaler touches. One-hot and cyclic columns
# keep their encoding untouched so their invariants survive scaling.
SCALED_KINDS = (KIND_NUMERIC, KIND_YEAR)


@dataclass
class FeatureMatrix:
    values: np.ndarray  # [n_rows, n_features] float64
    column_names: list[str]
    column_kinds: list[str]
    scaler_params: dict[str, tuple[float, float]] | None = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.column_names):
            raise SchemaError(
                f"values shape {self.values.shape} does not match "
                f"{len(self.column_names)} columns"
            )
        if len(self.column_kinds) != len(self.column_names):
            raise SchemaError("column_kinds and column_names lengths differ")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.column_names.index(name)]

    def rows(self, selector) -> "FeatureMatrix":
        return replace(self, values=self.values[selector])


@dataclass
class WindowedDataset:
    windows: np.ndarray  # [n_windows, window_size, n_features]
    labels: np.ndarray  # [n_windows] 0/1
    window_size: int
    source_row_index: np.ndarray  # final-timestep row index per window
    insufficient_rows: bool = False

    @property
    def n_windows(self) -> int:
        return self.windows.shape[0]


def encode_cyclical(x: float, period: float) -> tuple[float, float]:
    """Map a value on a cycle of length ``period`` onto the unit circle."""
    if period <= 0:
        raise ArgumentError(f"period must be positive, got {period}")
    angle = 2.0 * math.pi * x / period
    return math.sin(angle), math.cos(angle)


def expand_timestamp(t: datetime) -> dict[str, float]:
    """Expand a datetime into one numeric year plus six sin/cos pairs."""
    fields = {
        "month": t.month,
        "day": t.day,
        "day_of_week": t.weekday(),
        "hour": t.hour,
        "minute": t.minute,
        "second": t.second,
    }
    out: dict[str, float] = {"year": float(t.year)}
    for name, value in fields.items():
        s, c = encode_cyclical(value, CYCLE_PERIODS[name])
        out[f"{name}_sin"] = s
        out[f"{name}_cos"] = c
    return out


def one_hot(value, vocabulary: list, unknown_slot: bool = True) -> np.ndarray:
    """Binary indicator vector over ``vocabulary`` (+ trailing unknown slot).

    Unseen values map to the unknown slot when enabled and raise
    otherwise, so test-time categories can never crash the pipeline.
    """
    if not vocabulary:
        raise ArgumentError("empty one-hot vocabulary")
    size = len(vocabulary) + (1 if unknown_slot else 0)
    vec = np.zeros(size, dtype=np.float64)
    try:
        vec[vocabulary.index(value)] = 1.0
    except ValueError:
        if not unknown_slot:
            raise ArgumentError(f"value {value!r} not in vocabulary") from None
        vec[-1] = 1.0
    return vec


def clean(dataset: BillingDataset) -> BillingDataset:
    """Drop rows with missing numeric fields or non-positive submitted
    amounts. Extreme but positive amounts are retained on purpose."""
    kept = []
    for r in dataset.records:
        floats = (r.amount_submitted, r.amount_accepted, r.amount_insured)
        if any(math.isnan(v) for v in floats):
            continue
        if r.amount_submitted <= 0:
            continue
        kept.append(r)
    return BillingDataset(preset=dataset.preset, records=kept)


def _onehot_specs(preset: str) -> list[tuple[str, list]]:
    specs: list[tuple[str, list]] = [
        ("payment_term", list(datagen.PAYMENT_TERMS)),
        ("rejection_reason", list(datagen.REJECTION_REASONS)),
    ]
    if preset == "operation":
        specs.append(("treatment_code", list(datagen.TREATMENT_CODES)))
    return specs


def build_features(dataset: BillingDataset) -> FeatureMatrix:
    """Assemble the unscaled design matrix for a dataset.

    Ids and the ground-truth flag are deliberately excluded. Call
    fit_scaler/apply_scaler afterwards with training-partition rows.
    """
    time_names = list(expand_timestamp(datetime(2023, 1, 1)).keys())
    numeric_fields = [
        "amount_submitted",
        "amount_accepted",
        "amount_insured",
        "total_ops_accepted",
        "total_ops_stopped",
        "early_payment",
    ]
    names: list[str] = list(time_names)
    kinds: list[str] = [KIND_YEAR] + [
        KIND_SIN if n.endswith("_sin") else KIND_COS for n in time_names[1:]
    ]
    names += numeric_fields
    kinds += [KIND_NUMERIC] * len(numeric_fields)
    onehot_specs = _onehot_specs(dataset.preset)
    for fieldname, vocab in onehot_specs:
        for v in vocab + [UNKNOWN]:
            names.append(f"{fieldname}={v}")
            kinds.append(KIND_ONEHOT)

    rows = np.empty((len(dataset.records), len(names)), dtype=np.float64)
    for i, record in enumerate(dataset.records):
        expanded = expand_timestamp(record.timestamp)
        parts = [expanded[n] for n in time_names]
        parts += [float(getattr(record, f)) for f in numeric_fields]
        row = np.array(parts, dtype=np.float64)
        hots = [one_hot(getattr(record, f), vocab) for f, vocab in onehot_specs]
        rows[i] = np.concatenate([row] + hots)
    return FeatureMatrix(values=rows, column_names=names, column_kinds=kinds)


def fit_scaler(
    matrix: FeatureMatrix,
    rows: slice | np.ndarray | None = None,
    columns: list[str] | None = None,
) -> dict[str, tuple[float, float]]:
    """Per-column (min, max) over the given rows.

    ``columns`` defaults to the numeric and year columns; pass all
    column names to rescale everything (the autoencoder needs inputs in
    [0, 1], which the cyclic columns otherwise violate).
    """
    if columns is None:
        columns = [
            n for n, k in zip(matrix.column_names, matrix.column_kinds) if k in SCALED_KINDS
        ]
    data = matrix.values if rows is None else matrix.values[rows]
    params: dict[str, tuple[float, float]] = {}
    for name in columns:
        col = data[:, matrix.column_names.index(name)]
        params[name] = (float(col.min()), float(col.max()))
    return params


def apply_scaler(matrix: FeatureMatrix, params: dict[str, tuple[float, float]]) -> FeatureMatrix:
    """Return a scaled copy: (x - min) / (max - min), constant columns
    map to 0, out-of-range values are NOT clipped (they are signal)."""
    missing = [n for n in params if n not in matrix.column_names]
    if missing:
        raise SchemaError(f"scaler refers to absent columns {missing}")
    values = matrix.values.copy()
    for name, (lo, hi) in params.items():
        j = matrix.column_names.index(name)
        if hi == lo:
            values[:, j] = 0.0
        else:
            values[:, j] = (values[:, j] - lo) / (hi - lo)
    return replace(matrix, values=values, scaler_params=dict(params))


def make_windows(
    values: np.ndarray,
    labels: np.ndarray,
    window_size: int,
    row_offset: int = 0,
) -> WindowedDataset:
    """Stride-1 chronological windows labeled by their final timestep.

    Fewer rows than the window size yields an empty dataset with the
    insufficient_rows flag set rather than an error.
    """
    if window_size < 1:
        raise ArgumentError(f"window_size must be >= 1, got {window_size}")
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels)
    if values.shape[0] != labels.shape[0]:
        raise ArgumentError(
            f"row/label count mismatch: {values.shape[0]} vs {labels.shape[0]}"
        )
    n, d = values.shape
    n_windows = max(0, n - window_size + 1)
    if n_windows == 0:
        return WindowedDataset(
            windows=np.empty((0, window_size, d)),
            labels=np.empty((0,), dtype=labels.dtype),
            window_size=window_size,
            source_row_index=np.empty((0,), dtype=np.int64),
            insufficient_rows=True,
        )
    # zero-copy strided view; window i is values[i : i + window_size]
    windows = np.lib.stride_tricks.sliding_window_view(values, window_size, axis=0)
    windows = windows.transpose(0, 2, 1)
    final = np.arange(window_size - 1, n)
    return WindowedDataset(
        windows=windows,
        labels=labels[final].copy(),
        window_size=window_size,
        source_row_index=final + row_offset,
    )


def chronological_split(n: int, fractions: tuple[float, ...] = (0.6, 0.2, 0.2)) -> list[range]:
    """Contiguous index ranges in chronological order (last range absorbs
    the rounding remainder)."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ArgumentError(f"split fractions sum to {sum(fractions)}, expected 1.0")
    bounds = [0]
    for f in fractions[:-1]:
        bounds.append(bounds[-1] + int(math.floor(f * n)))
    bounds.append(n)
    return [range(a, b) for a, b in zip(bounds, bounds[1:])]


# ----------------------------------------------------------------------
# FeatureMatrix serialization: CSV of values + JSON sidecar of metadata

def sidecar_path(csv_path: str | Path) -> Path:
    return Path(str(csv_path) + ".json")


def write_features(matrix: FeatureMatrix, csv_path: str | Path) -> None:
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(matrix.column_names)
        for row in matrix.values:
            writer.writerow([repr(float(v)) for v in row])
    meta = {
        "column_kinds": matrix.column_kinds,
        "scaler_params": matrix.scaler_params,
    }
    with open(sidecar_path(csv_path), "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)


def read_features(csv_path: str | Path) -> FeatureMatrix:
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        names = next(reader)
        values = np.array([[float(v) for v in row] for row in reader], dtype=np.float64)
    if values.size == 0:
        values = values.reshape(0, len(names))
    side = sidecar_path(csv_path)
    with open(side) as fh:
        meta = json.load(fh)
    params = meta.get("scaler_params")
    if params is not None:
        params = {k: tuple(v) for k, v in params.items()}
    return FeatureMatrix(
        values=values,
        column_names=names,
        column_kinds=meta["column_kinds"],
        scaler_params=params,
    )
