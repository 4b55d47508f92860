"""Stacking hybrid: a logistic-regression meta-learner over the two
base classifiers' predicted labels (LSTM feature first, then the
transformer). Trained by full-batch gradient descent on the
class-weighted logistic loss with balanced weights w_c = n / (2 n_c)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError

L2_STRENGTH = 1e-4
MAX_ITERATIONS = 1000
GRADIENT_TOLERANCE = 1e-6
STEP_SIZE = 1.0


@dataclass
class StackedEnsemble:
    weights: np.ndarray  # [2]: LSTM, transformer
    bias: float
    class_weights: dict[int, float]
    trained_on: str = "unknown"
    warnings: list[str] = field(default_factory=list)


def balanced_class_weights(targets: np.ndarray) -> dict[int, float]:
    n = len(targets)
    weights = {}
    for cls in (0, 1):
        count = int(np.sum(targets == cls))
        weights[cls] = n / (2.0 * count) if count else 0.0
    return weights


def _stack_features(lstm_labels, transformer_labels) -> np.ndarray:
    a = np.asarray(lstm_labels, dtype=np.float64)
    b = np.asarray(transformer_labels, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ArgumentError(f"label vectors must match: {a.shape} vs {b.shape}")
    return np.column_stack([a, b])


def fit_meta(
    lstm_val_labels: np.ndarray,
    transformer_val_labels: np.ndarray,
    target_val_labels: np.ndarray,
    trained_on: str = "unknown",
) -> StackedEnsemble:
    """Fit the meta-learner on validation-split label vectors.

    A single-class target cannot be separated; the fit degenerates to a
    constant predictor of that class, with a warning attached.
    """
    X = _stack_features(lstm_val_labels, transformer_val_labels)
    y = np.asarray(target_val_labels, dtype=np.float64)
    if y.shape[0] != X.shape[0]:
        raise ArgumentError(f"target length {y.shape[0]} vs features {X.shape[0]}")

    classes = np.unique(y)
    if len(classes) < 2:
        only = int(classes[0]) if len(classes) else 0
        bias = 20.0 if only == 1 else -20.0
        return StackedEnsemble(
            weights=np.zeros(2),
            bias=bias,
            class_weights={0: 0.0, 1: 0.0, only: 1.0},
            trained_on=trained_on,
            warnings=[f"degenerate fit: target contains only class {only}"],
        )

    class_weights = balanced_class_weights(y)
    sample_w = np.where(y == 1, class_weights[1], class_weights[0])
    w_total = sample_w.sum()
    weights = np.zeros(2)
    bias = 0.0
    for _ in range(MAX_ITERATIONS):
        z = X @ weights + bias
        p = 1.0 / (1.0 + np.exp(-z))
        residual = sample_w * (p - y)
        grad_w = X.T @ residual / w_total + L2_STRENGTH * weights
        grad_b = residual.sum() / w_total
        grad_norm = float(np.sqrt(grad_w @ grad_w + grad_b * grad_b))
        if grad_norm < GRADIENT_TOLERANCE:
            break
        weights -= STEP_SIZE * grad_w
        bias -= STEP_SIZE * grad_b
    return StackedEnsemble(
        weights=weights, bias=float(bias), class_weights=class_weights, trained_on=trained_on
    )


def predict_meta(
    ensemble: StackedEnsemble,
    lstm_labels: np.ndarray,
    transformer_labels: np.ndarray,
) -> np.ndarray:
    """Final labels: 1 iff sigmoid(w.x + b) >= 0.5 (boundary inclusive,
    so an all-zero meta-learner predicts 1)."""
    X = _stack_features(lstm_labels, transformer_labels)
    p = 1.0 / (1.0 + np.exp(-(X @ ensemble.weights + ensemble.bias)))
    return (p >= 0.5).astype(np.int8)


def ensemble_to_json(ensemble: StackedEnsemble) -> dict:
    return {
        "weights": [float(w) for w in ensemble.weights],
        "bias": ensemble.bias,
        "class_weights": {str(k): v for k, v in ensemble.class_weights.items()},
        "trained_on": ensemble.trained_on,
        "warnings": ensemble.warnings,
    }
