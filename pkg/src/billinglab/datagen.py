"""Synthetic billing datasets with controlled anomaly injection.

Two schema presets are supported: "declaration" (one row per declared
invoice) and "operation" (one row per billed operation; adds a
practitioner id and a treatment code). Baseline amounts are drawn
log-normally with client-specific location parameters, which gives the
right-skewed distributions typical of billing data. A configurable
fraction of rows is turned into anomalies by one of four injectors;
the ground truth is kept in ``is_injected_anomaly`` for evaluation and
is never exposed to models as a feature.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .errors import ConfigError, IngestionError

PRESETS = ("declaration", "operation")

PAYMENT_TERMS = (1, 2, 3, 4, 5, 6)
# Term 6 is kept rare so the odd-payment-term injector has a genuinely
# low-frequency target.
PAYMENT_TERM_WEIGHTS = (0.30, 0.27, 0.22, 0.15, 0.058, 0.002)
RARE_PAYMENT_TERM = 6

# Non-"none" reasons are uncommon but not rare: a legitimate rejection
# must not read as an isolation-grade outlier on its own.
REJECTION_REASONS = (
    "none",
    "incomplete_code",
    "coverage_expired",
    "duplicate_claim",
    "limit_exceeded",
)
REJECTION_WEIGHTS = (0.80, 0.06, 0.05, 0.05, 0.04)

TREATMENT_CODES = (
    "intake",
    "session",
    "evaluation",
    "group_session",
    "crisis",
    "teletherapy",
    "aftercare",
)

ANOMALY_KINDS = (
    "inflated_amount",
    "duplicate_billing",
    "odd_payment_term",
    "burst_activity",
)

DEFAULT_ANOMALY_MIX = {
    "inflated_amount": 0.4,
    "duplicate_billing": 0.2,
    "odd_payment_term": 0.2,
    "burst_activity": 0.2,
}

INFLATION_FACTOR_RANGE = (5.0, 50.0)
DUPLICATE_SHIFT = timedelta(seconds=61)
BURST_SIZE = 4
BURST_SPACING = timedelta(seconds=45)


@dataclass
class BillingRecord:
    record_id: int
    client_id: str
    timestamp: datetime
    amount_submitted: float
    amount_accepted: float
    amount_insured: float
    total_ops_accepted: int
    total_ops_stopped: int
    payment_term: int
    early_payment: bool
    rejection_reason: str
    is_injected_anomaly: bool
    practitioner_id: str | None = None  # operation preset only
    treatment_code: str | None = None  # operation preset only


@dataclass
class BillingDataset:
    preset: str
    records: list[BillingRecord]
    warnings: list[str] = field(default_factory=list, compare=False)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def anomaly_labels(self) -> np.ndarray:
        """Ground-truth 0/1 vector, one entry per record."""
        return np.array([int(r.is_injected_anomaly) for r in self.records], dtype=np.int8)

    @property
    def n_anomalies(self) -> int:
        return int(self.anomaly_labels.sum())


@dataclass
class GeneratorConfig:
    n_records: int
    preset: str = "declaration"
    n_clients: int = 20
    n_practitioners: int = 10
    start: datetime = datetime(2023, 1, 1)
    end: datetime = datetime(2024, 12, 31)
    anomaly_rate: float = 0.016
    anomaly_mix: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_ANOMALY_MIX))
    seed: int = 0

    def validate(self) -> None:
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; expected one of {PRESETS}")
        if self.n_records <= 0:
            raise ConfigError("n_records must be positive")
        if self.n_clients <= 0 or self.n_practitioners <= 0:
            raise ConfigError("n_clients and n_practitioners must be positive")
        if not self.start < self.end:
            raise ConfigError("empty date range: start must precede end")
        if not 0.0 <= self.anomaly_rate <= 0.5:
            raise ConfigError(f"anomaly_rate {self.anomaly_rate} outside [0, 0.5]")
        unknown = set(self.anomaly_mix) - set(ANOMALY_KINDS)
        if unknown:
            raise ConfigError(f"unknown anomaly kinds in mix: {sorted(unknown)}")
        total = sum(self.anomaly_mix.values())
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"anomaly_mix weights sum to {total}, expected 1.0")
        if any(w < 0 for w in self.anomaly_mix.values()):
            raise ConfigError("anomaly_mix weights must be non-negative")


# ----------------------------------------------------------------------
# row-level injectors (exposed so tests can drive them with explicit
# parameters instead of sampled ones)

def inflate_record(record: BillingRecord, factor: float) -> BillingRecord:
    """Multiply the submitted amount by ``factor`` and flag the row."""
    return replace(
        record,
        amount_submitted=round(record.amount_submitted * factor, 2),
        is_injected_anomaly=True,
    )


def clone_shifted(record: BillingRecord, shift: timedelta = DUPLICATE_SHIFT) -> BillingRecord:
    """Duplicate a row at a shifted timestamp; the clone carries the flag."""
    return replace(record, timestamp=record.timestamp + shift, is_injected_anomaly=True)


def force_rare_term(record: BillingRecord, term: int = RARE_PAYMENT_TERM) -> BillingRecord:
    return replace(record, payment_term=term, is_injected_anomaly=True)


# ----------------------------------------------------------------------

def _plan_events(n_flagged: int, mix: dict[str, float]) -> list[tuple[str, int]]:
    """Apportion a flagged-row budget over injector kinds.

    Returns (kind, size) events where size is the number of flagged rows
    the event produces: 1 for mutation/duplication events, up to
    BURST_SIZE for a burst. Apportionment by largest remainder so the
    sizes sum to exactly ``n_flagged``.
    """
    if n_flagged == 0:
        return []
    kinds = [k for k in ANOMALY_KINDS if mix.get(k, 0.0) > 0.0]
    if not kinds:
        return []
    quotas = {k: n_flagged * mix[k] for k in kinds}
    counts = {k: int(math.floor(quotas[k])) for k in kinds}
    short = n_flagged - sum(counts.values())
    by_remainder = sorted(kinds, key=lambda k: (counts[k] - quotas[k], k))
    for k in by_remainder[:short]:
        counts[k] += 1
    events: list[tuple[str, int]] = []
    for kind in kinds:
        budget = counts[kind]
        if kind == "burst_activity":
            while budget > 0:
                size = min(BURST_SIZE, budget)
                events.append((kind, size))
                budget -= size
        else:
            events.extend((kind, 1) for _ in range(budget))
    return events


def _inserted_rows(events: list[tuple[str, int]]) -> int:
    total = 0
    for kind, size in events:
        if kind == "duplicate_billing":
            total += 1
        elif kind == "burst_activity":
            total += size
    return total


def _client_locations(n_clients: int, rng: np.random.Generator) -> np.ndarray:
    # log-amount location per client; exp of these gives a median invoice
    # around 150 currency units. The spread is kept moderate so a 5-50x
    # inflated amount is an outlier for every client, not just small ones.
    return rng.normal(math.log(150.0), 0.35, size=n_clients)


def _draw_clean_record(
    preset: str,
    client: int,
    client_loc: float,
    when: datetime,
    rng: np.random.Generator,
    n_practitioners: int,
) -> BillingRecord:
    submitted = round(float(rng.lognormal(client_loc, 0.25)), 2)
    submitted = max(submitted, 0.01)
    accepted = round(submitted * float(rng.uniform(0.70, 1.0)), 2)
    insured = round(submitted * float(rng.uniform(0.0, 0.9)), 2)
    ops_accepted = int(rng.poisson(3.0))
    ops_stopped = int(rng.binomial(ops_accepted, 0.08)) if ops_accepted else 0
    term = int(rng.choice(PAYMENT_TERMS, p=PAYMENT_TERM_WEIGHTS))
    early = bool(rng.random() < 0.15)
    reason = str(rng.choice(REJECTION_REASONS, p=REJECTION_WEIGHTS))
    practitioner = None
    code = None
    if preset == "operation":
        practitioner = f"P{int(rng.integers(n_practitioners)):04d}"
        code = str(rng.choice(TREATMENT_CODES))
    return BillingRecord(
        record_id=-1,
        client_id=f"C{client:04d}",
        timestamp=when,
        amount_submitted=submitted,
        amount_accepted=accepted,
        amount_insured=insured,
        total_ops_accepted=ops_accepted,
        total_ops_stopped=ops_stopped,
        payment_term=term,
        early_payment=early,
        rejection_reason=reason,
        is_injected_anomaly=False,
        practitioner_id=practitioner,
        treatment_code=code,
    )


def _random_timestamps(n: int, start: datetime, end: datetime, rng: np.random.Generator) -> list[datetime]:
    span = int((end - start).total_seconds())
    offsets = rng.integers(0, max(span, 1), size=n)
    return [start + timedelta(seconds=int(o)) for o in offsets]


def _apply_events(
    records: list[BillingRecord],
    events: list[tuple[str, int]],
    rng: np.random.Generator,
) -> list[BillingRecord]:
    """Mutate/insert anomalies in place of the given clean rows.

    Each event consumes one distinct target row: mutation events rewrite
    it, duplication clones it, bursts anchor a cluster of inserted rows
    on its client and timestamp. Returns the new record list (unsorted).
    """
    if not events:
        return list(records)
    if len(events) > len(records):
        raise ConfigError(
            f"cannot place {len(events)} anomaly events in {len(records)} rows"
        )
    out = list(records)
    targets = rng.choice(len(records), size=len(events), replace=False)
    inserted: list[BillingRecord] = []
    for (kind, size), idx in zip(events, targets):
        target = out[idx]
        if kind == "inflated_amount":
            out[idx] = inflate_record(target, float(rng.uniform(*INFLATION_FACTOR_RANGE)))
        elif kind == "odd_payment_term":
            out[idx] = force_rare_term(target)
        elif kind == "duplicate_billing":
            inserted.append(clone_shifted(target))
        elif kind == "burst_activity":
            for j in range(size):
                row = replace(
                    target,
                    timestamp=target.timestamp + (j + 1) * BURST_SPACING,
                    amount_submitted=round(target.amount_submitted * float(rng.uniform(0.8, 1.2)), 2),
                    is_injected_anomaly=True,
                )
                row = replace(row, amount_accepted=round(row.amount_submitted * float(rng.uniform(0.7, 1.0)), 2))
                inserted.append(row)
        else:  # pragma: no cover - guarded by validate()
            raise ConfigError(f"unknown anomaly kind {kind!r}")
    return out + inserted


def _sort_and_number(records: list[BillingRecord]) -> list[BillingRecord]:
    ordered = sorted(enumerate(records), key=lambda p: (p[1].timestamp, p[0]))
    return [replace(r, record_id=i) for i, (_, r) in enumerate(ordered)]


def generate_dataset(config: GeneratorConfig) -> BillingDataset:
    """Generate a chronologically sorted dataset of exactly n_records rows.

    ``floor(anomaly_rate * n_records)`` rows carry the injected-anomaly
    flag; rows inserted by duplication/burst events are part of that
    budget, so the clean baseline is shrunk to compensate. Identical
    (config, seed) pairs produce identical datasets.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    n = config.n_records
    n_flagged = int(math.floor(config.anomaly_rate * n))
    events = _plan_events(n_flagged, config.anomaly_mix)
    n_clean = n - _inserted_rows(events)
    if n_clean <= 0 or len(events) > n_clean:
        raise ConfigError(
            f"anomaly_rate {config.anomaly_rate} incompatible with n_records {n}"
        )

    locs = _client_locations(config.n_clients, rng)
    clients = rng.integers(0, config.n_clients, size=n_clean)
    stamps = _random_timestamps(n_clean, config.start, config.end, rng)
    rows = [
        _draw_clean_record(config.preset, int(c), float(locs[c]), t, rng, config.n_practitioners)
        for c, t in zip(clients, stamps)
    ]
    rows = _apply_events(rows, events, rng)
    dataset = BillingDataset(preset=config.preset, records=_sort_and_number(rows))
    if n_flagged == 0 and config.anomaly_rate > 0:
        dataset.warnings.append(
            f"anomaly_rate {config.anomaly_rate} yields zero anomalies at n={n}"
        )
    return dataset


def inject_anomalies(
    clean: BillingDataset,
    mix: dict[str, float] | None = None,
    rate: float = 0.016,
    seed: int = 0,
) -> BillingDataset:
    """Inject ``floor(rate * len(clean))`` flagged rows into a clean dataset.

    Mutation injectors rewrite existing rows; duplication and bursts
    insert rows, so the output may be longer than the input. Inserted
    rows receive fresh record ids above the current maximum and the
    result is re-sorted chronologically.
    """
    if clean.n_anomalies:
        raise ConfigError("input dataset already contains injected anomalies")
    mix = dict(DEFAULT_ANOMALY_MIX) if mix is None else mix
    probe = GeneratorConfig(n_records=max(len(clean), 1), anomaly_rate=rate, anomaly_mix=mix, seed=seed)
    probe.validate()
    rng = np.random.default_rng(seed)
    n_flagged = int(math.floor(rate * len(clean)))
    events = _plan_events(n_flagged, mix)
    rows = _apply_events(list(clean.records), events, rng)

    next_id = max((r.record_id for r in clean.records), default=-1) + 1
    fresh = []
    seen = len(clean.records)
    for i, r in enumerate(rows):
        if i >= seen:  # inserted rows sit at the tail before sorting
            fresh.append(replace(r, record_id=next_id))
            next_id += 1
        else:
            fresh.append(r)
    ordered = sorted(enumerate(fresh), key=lambda p: (p[1].timestamp, p[0]))
    out = BillingDataset(preset=clean.preset, records=[r for _, r in ordered])
    if rate > 0 and n_flagged == 0:
        out.warnings.append(f"rate {rate} yields zero anomalies at n={len(clean)}")
    return out


def sparse_original_labels(dataset: BillingDataset, label_rate: float, seed: int = 0) -> np.ndarray:
    """Thin the ground truth to mimic scarce confirmed labels.

    Returns a 0/1 vector marking ``floor(label_rate * n)`` rows, sampled
    uniformly from the injected-anomaly rows (all of them if fewer are
    available). ``label_rate=None`` handling is the caller's concern;
    here the rate must be a number in [0, 1].
    """
    if not 0.0 <= label_rate <= 1.0:
        raise ConfigError(f"label_rate {label_rate} outside [0, 1]")
    n = len(dataset)
    want = int(math.floor(label_rate * n))
    anomaly_idx = np.flatnonzero(dataset.anomaly_labels)
    rng = np.random.default_rng(seed)
    keep = anomaly_idx if want >= len(anomaly_idx) else np.sort(rng.choice(anomaly_idx, size=want, replace=False))
    labels = np.zeros(n, dtype=np.int8)
    labels[keep] = 1
    return labels


# ----------------------------------------------------------------------
# CSV round trip

_BASE_COLUMNS = [
    "record_id",
    "client_id",
    "timestamp",
    "amount_submitted",
    "amount_accepted",
    "amount_insured",
    "total_ops_accepted",
    "total_ops_stopped",
    "payment_term",
    "early_payment",
    "rejection_reason",
    "is_injected_anomaly",
]
_OPERATION_COLUMNS = (
    _BASE_COLUMNS[:2] + ["practitioner_id"] + _BASE_COLUMNS[2:11] + ["treatment_code"] + _BASE_COLUMNS[11:]
)


def csv_columns(preset: str) -> list[str]:
    return list(_OPERATION_COLUMNS) if preset == "operation" else list(_BASE_COLUMNS)


def _format_value(record: BillingRecord, column: str) -> str:
    value = getattr(record, column)
    if column == "timestamp":
        return value.isoformat()
    if column in ("early_payment", "is_injected_anomaly"):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return "" if value is None else str(value)


def write_csv(dataset: BillingDataset, path: str | Path) -> None:
    """Write the dataset with a fixed header; floats use repr so the
    round trip is exact, dates are ISO-8601, booleans are 0/1."""
    columns = csv_columns(dataset.preset)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for record in dataset.records:
            writer.writerow([_format_value(record, c) for c in columns])


def _parse_row(row: list[str], columns: list[str], rownum: int, preset: str) -> BillingRecord:
    if len(row) != len(columns):
        raise IngestionError(
            f"row {rownum}: expected {len(columns)} fields, found {len(row)}"
        )
    values = dict(zip(columns, row))

    def _int(col: str) -> int:
        try:
            return int(values[col])
        except ValueError as exc:
            raise IngestionError(f"row {rownum}: bad integer in {col}: {values[col]!r}") from exc

    def _float(col: str) -> float:
        text = values[col]
        if text == "":
            return float("nan")
        try:
            return float(text)
        except ValueError as exc:
            raise IngestionError(f"row {rownum}: bad number in {col}: {text!r}") from exc

    try:
        stamp = datetime.fromisoformat(values["timestamp"])
    except ValueError as exc:
        raise IngestionError(
            f"row {rownum}: unparsable timestamp {values['timestamp']!r}"
        ) from exc
    return BillingRecord(
        record_id=_int("record_id"),
        client_id=values["client_id"],
        timestamp=stamp,
        amount_submitted=_float("amount_submitted"),
        amount_accepted=_float("amount_accepted"),
        amount_insured=_float("amount_insured"),
        total_ops_accepted=_int("total_ops_accepted"),
        total_ops_stopped=_int("total_ops_stopped"),
        payment_term=_int("payment_term"),
        early_payment=values["early_payment"] == "1",
        rejection_reason=values["rejection_reason"],
        is_injected_anomaly=values["is_injected_anomaly"] == "1",
        practitioner_id=values.get("practitioner_id") or None,
        treatment_code=values.get("treatment_code") or None,
    )


def read_csv(path: str | Path) -> BillingDataset:
    """Read a dataset written by write_csv; the preset is inferred from
    the header. Structural problems raise IngestionError naming the row."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError("empty file: missing header") from None
        if header == _OPERATION_COLUMNS:
            preset = "operation"
        elif header == _BASE_COLUMNS:
            preset = "declaration"
        else:
            missing = [c for c in _BASE_COLUMNS if c not in header]
            raise IngestionError(f"unrecognized header; missing columns {missing}")
        records = [
            _parse_row(row, header, rownum, preset)
            for rownum, row in enumerate(reader, start=2)
        ]
    return BillingDataset(preset=preset, records=records)
