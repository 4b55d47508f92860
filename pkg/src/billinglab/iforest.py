"""Isolation forest scorer and contamination-quantile pseudo-labeler.

Each tree grows on a random row subsample and a random feature subset:
uniform random feature, uniform random split between the node's min and
max, until a node holds at most one row or the depth cap ceil(log2 psi)
is reached. A degenerate draw (constant feature at the node) still
counts as a split; the rows fall through to one child, so duplicate
rows bottom out at the depth cap, never in an infinite recursion.

Path lengths carry the standard unresolved-leaf adjustment
c(m) = 2*H(m-1) - 2(m-1)/m with H(k) = ln(k) + Euler's gamma (H via the
log approximation for every m, including m = 2). Scores follow
s(x) = 2^(-E[h(x)] / c(psi)); the decision score is d(x) = 0.5 - s(x),
so anomalies sit at the negative end and the contamination quantile of
the fit-data decision scores becomes the labeling threshold.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArgumentError, FitError

EULER_GAMMA = 0.5772156649015329


def harmonic(k: int) -> float:
    """H(k) approximated as ln(k) + gamma (exact enough for path math)."""
    return math.log(k) + EULER_GAMMA


def c_adjustment(m: int) -> float:
    """Expected extra path length below an unresolved leaf of size m."""
    if m <= 1:
        return 0.0
    return 2.0 * harmonic(m - 1) - 2.0 * (m - 1) / m


@dataclass
class IsolationTree:
    """Flat node arrays; children index into the same arrays, -1 marks a
    leaf. Leaves carry (size, depth) for the path-length adjustment."""

    feature: np.ndarray  # [n_nodes] int, -1 for leaves
    split: np.ndarray  # [n_nodes] float
    left: np.ndarray  # [n_nodes] int
    right: np.ndarray  # [n_nodes] int
    size: np.ndarray  # [n_nodes] int, valid at leaves
    depth: np.ndarray  # [n_nodes] int
    max_depth: int

    @property
    def n_nodes(self) -> int:
        return len(self.feature)


class _TreeBuilder:
    def __init__(self, X: np.ndarray, features: np.ndarray, depth_cap: int, rng: np.random.Generator):
        self.X = X
        self.features = features
        self.depth_cap = depth_cap
        self.rng = rng
        self.feature: list[int] = []
        self.split: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.size: list[int] = []
        self.depth: list[int] = []

    def build(self, rows: np.ndarray, depth: int) -> int:
        node = len(self.feature)
        self.feature.append(-1)
        self.split.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.size.append(len(rows))
        self.depth.append(depth)
        if len(rows) <= 1 or depth >= self.depth_cap:
            return node
        f = int(self.rng.choice(self.features))
        col = self.X[rows, f]
        lo, hi = float(col.min()), float(col.max())
        split = float(self.rng.uniform(lo, hi)) if hi > lo else lo
        mask = col < split
        self.feature[node] = f
        self.split[node] = split
        self.left[node] = self.build(rows[mask], depth + 1)
        self.right[node] = self.build(rows[~mask], depth + 1)
        return node

    def finish(self) -> IsolationTree:
        return IsolationTree(
            feature=np.array(self.feature, dtype=np.int64),
            split=np.array(self.split, dtype=np.float64),
            left=np.array(self.left, dtype=np.int64),
            right=np.array(self.right, dtype=np.int64),
            size=np.array(self.size, dtype=np.int64),
            depth=np.array(self.depth, dtype=np.int64),
            max_depth=self.depth_cap,
        )


@dataclass
class IsolationForestModel:
    trees: list[IsolationTree]
    subsample_size: int
    contamination: float
    threshold: float
    n_estimators: int
    max_features: float
    bootstrap: bool
    seed: int
    fit_decision_scores: np.ndarray = field(repr=False, default=None)

    @property
    def score_normalizer(self) -> float:
        return c_adjustment(self.subsample_size)


@dataclass
class PseudoLabelSet:
    scores: np.ndarray
    labels: np.ndarray
    threshold: float
    source: str
    warning: str | None = None

    @property
    def n_positive(self) -> int:
        return int(self.labels.sum())


def fit_iforest(
    X: np.ndarray,
    n_estimators: int = 50,
    subsample_fraction: float = 0.90,
    max_features: float = 0.10,
    bootstrap: bool = False,
    contamination: float = 0.016,
    seed: int = 0,
) -> IsolationForestModel:
    """Fit the forest and set the labeling threshold from the
    contamination quantile of the fit-data decision scores."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise FitError(f"need a 2-d matrix with at least 2 rows, got shape {X.shape}")
    if not 0.0 < contamination < 0.5:
        raise ArgumentError(f"contamination {contamination} outside (0, 0.5)")
    if not 0.0 < subsample_fraction <= 1.0 or not 0.0 < max_features <= 1.0:
        raise ArgumentError("subsample_fraction and max_features must lie in (0, 1]")
    n, d = X.shape
    psi = max(2, math.ceil(subsample_fraction * n))
    m_features = max(1, math.ceil(max_features * d))
    depth_cap = math.ceil(math.log2(psi))

    trees = []
    for child_seq in np.random.SeedSequence(seed).spawn(n_estimators):
        rng = np.random.default_rng(child_seq)
        rows = rng.choice(n, size=psi, replace=bootstrap)
        feats = rng.choice(d, size=m_features, replace=False)
        builder = _TreeBuilder(X, feats, depth_cap, rng)
        builder.build(rows, 0)
        trees.append(builder.finish())

    model = IsolationForestModel(
        trees=trees,
        subsample_size=psi,
        contamination=contamination,
        threshold=np.nan,
        n_estimators=n_estimators,
        max_features=max_features,
        bootstrap=bootstrap,
        seed=seed,
    )
    d_scores = score(model, X)
    model.fit_decision_scores = d_scores
    k = int(math.floor(contamination * n))
    if k >= 1:
        order = np.argsort(d_scores, kind="stable")
        model.threshold = float(d_scores[order[k - 1]])
    else:
        # nothing labelable; park the threshold below the attainable range
        model.threshold = -0.5
    return model


def path_length(tree: IsolationTree, x: np.ndarray) -> float:
    """Depth of x's leaf plus the unresolved-leaf size adjustment."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ArgumentError(f"expected a feature vector, got shape {x.shape}")
    node = 0
    while tree.feature[node] != -1:
        f = tree.feature[node]
        if f >= x.shape[0]:
            raise ArgumentError(
                f"vector of length {x.shape[0]} too short for split feature {f}"
            )
        node = tree.left[node] if x[f] < tree.split[node] else tree.right[node]
    return float(tree.depth[node]) + c_adjustment(int(tree.size[node]))


def _tree_paths(tree: IsolationTree, X: np.ndarray) -> np.ndarray:
    """Vectorized path lengths for a whole matrix."""
    n = X.shape[0]
    node = np.zeros(n, dtype=np.int64)
    for _ in range(tree.max_depth + 1):
        internal = tree.feature[node] != -1
        if not internal.any():
            break
        idx = np.flatnonzero(internal)
        feats = tree.feature[node[idx]]
        go_left = X[idx, feats] < tree.split[node[idx]]
        node[idx] = np.where(go_left, tree.left[node[idx]], tree.right[node[idx]])
    sizes = tree.size[node]
    adjust = np.zeros(n)
    for m in np.unique(sizes[sizes > 1]):
        adjust[sizes == m] = c_adjustment(int(m))
    return tree.depth[node].astype(np.float64) + adjust


def average_path_length(model: IsolationForestModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    paths = np.zeros(X.shape[0])
    for tree in model.trees:
        paths += _tree_paths(tree, X)
    return paths / len(model.trees)


def decision_from_path(mean_path: np.ndarray, subsample_size: int) -> np.ndarray:
    """d(x) = 0.5 - 2^(-E[h(x)] / c(psi)); anomalies come out negative."""
    s = np.power(2.0, -np.asarray(mean_path, dtype=np.float64) / c_adjustment(subsample_size))
    return 0.5 - s


def score(model: IsolationForestModel, X: np.ndarray) -> np.ndarray:
    """Decision scores in (-0.5, 0.5]; lower means more anomalous."""
    return decision_from_path(average_path_length(model, X), model.subsample_size)


def pseudo_label_iforest(model: IsolationForestModel, X: np.ndarray) -> PseudoLabelSet:
    """Label the floor(contamination * n) lowest decision scores.

    On the fitting data the count is exact, with threshold ties broken
    by lower row index; on new data the stored threshold rule
    d(x) <= theta applies as-is.
    """
    d = score(model, X)
    warning = None
    is_fit_data = (
        model.fit_decision_scores is not None
        and d.shape == model.fit_decision_scores.shape
        and np.array_equal(d, model.fit_decision_scores)
    )
    labels = np.zeros(len(d), dtype=np.int8)
    if is_fit_data:
        k = int(math.floor(model.contamination * len(d)))
        if k == 0:
            warning = (
                f"contamination {model.contamination} labels nothing at n={len(d)}"
            )
        else:
            order = np.argsort(d, kind="stable")
            labels[order[:k]] = 1
    else:
        labels[d <= model.threshold] = 1
    return PseudoLabelSet(
        scores=d, labels=labels, threshold=model.threshold, source="iforest", warning=warning
    )


# ----------------------------------------------------------------------
# JSON serialization

def model_to_json(model: IsolationForestModel) -> dict:
    return {
        "kind": "isolation_forest",
        "subsample_size": model.subsample_size,
        "contamination": model.contamination,
        "threshold": model.threshold,
        "n_estimators": model.n_estimators,
        "max_features": model.max_features,
        "bootstrap": model.bootstrap,
        "seed": model.seed,
        "trees": [
            {
                "feature": t.feature.tolist(),
                "split": t.split.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "size": t.size.tolist(),
                "depth": t.depth.tolist(),
                "max_depth": t.max_depth,
            }
            for t in model.trees
        ],
    }


def save_model(model: IsolationForestModel, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_json(model), fh, sort_keys=True)


def load_model(path: str | Path) -> IsolationForestModel:
    with open(path) as fh:
        doc = json.load(fh)
    trees = [
        IsolationTree(
            feature=np.array(t["feature"], dtype=np.int64),
            split=np.array(t["split"], dtype=np.float64),
            left=np.array(t["left"], dtype=np.int64),
            right=np.array(t["right"], dtype=np.int64),
            size=np.array(t["size"], dtype=np.int64),
            depth=np.array(t["depth"], dtype=np.int64),
            max_depth=t["max_depth"],
        )
        for t in doc["trees"]
    ]
    return IsolationForestModel(
        trees=trees,
        subsample_size=doc["subsample_size"],
        contamination=doc["contamination"],
        threshold=doc["threshold"],
        n_estimators=doc["n_estimators"],
        max_features=doc["max_features"],
        bootstrap=doc["bootstrap"],
        seed=doc["seed"],
    )
