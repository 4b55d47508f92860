"""Reconstruction-error pseudo-labeler.

A small dense autoencoder (two relu encoder layers, mirrored decoder
ending in sigmoid) is trained to reconstruct min-max-scaled rows; rows
whose mean absolute reconstruction error exceeds the nearest-rank
percentile threshold of the training errors get pseudo-label 1 (strict
inequality, so a row exactly at the threshold stays 0).

Training minimizes mean absolute error by default, matching the error
definition used for the threshold; a squared-error training objective
is available behind the ``train_loss`` flag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import nnet
from .autodiff import Tensor
from .errors import ArgumentError, PreconditionError
from .iforest import PseudoLabelSet

PRESET_WIDTHS = {"declaration": (32, 10), "operation": (16, 8)}
PRESET_OPTIMIZER = {"declaration": ("adam", 0.01), "operation": ("rmsprop", 0.01)}


def nearest_rank_percentile(values: np.ndarray, percentile: float) -> float:
    """The (floor(p/100 * n) + 1)-th smallest value, capped at the max.

    On 1000 rows the 98.4th percentile is the 985th smallest value, so
    under the strict > rule at most the top 1.6% can exceed it.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ArgumentError("cannot take a percentile of an empty vector")
    if not 0.0 <= percentile <= 100.0:
        raise ArgumentError(f"percentile {percentile} outside [0, 100]")
    rank = min(values.size, math.floor(percentile / 100.0 * values.size) + 1)
    return float(np.sort(values, kind="stable")[rank - 1])


@dataclass
class AutoencoderModel:
    params: dict[str, Tensor]
    input_width: int
    hidden_widths: tuple[int, int]
    optimizer_kind: str
    learning_rate: float
    error_threshold: float
    threshold_percentile: float
    preset: str
    train_loss: str = "mae"


def _init_params(input_width: int, hidden: tuple[int, int], rng: np.random.Generator) -> dict[str, Tensor]:
    h1, h2 = hidden
    sizes = [(input_width, h1), (h1, h2), (h2, h1), (h1, input_width)]
    params: dict[str, Tensor] = {}
    for i, (fan_in, fan_out) in enumerate(sizes, start=1):
        params[f"W{i}"] = nnet.init_uniform(rng, (fan_in, fan_out), fan_in)
        params[f"b{i}"] = nnet.zeros_param((fan_out,))
    return params


def _forward_graph(params: dict[str, Tensor], x: np.ndarray) -> Tensor:
    h = ad.relu(ad.add(ad.matmul(Tensor(x), params["W1"]), params["b1"]))
    h = ad.relu(ad.add(ad.matmul(h, params["W2"]), params["b2"]))
    h = ad.relu(ad.add(ad.matmul(h, params["W3"]), params["b3"]))
    return ad.sigmoid(ad.add(ad.matmul(h, params["W4"]), params["b4"]))


def _forward_np(params: dict[str, Tensor], X: np.ndarray) -> np.ndarray:
    """Plain-numpy forward pass for scoring (no graph bookkeeping)."""
    h = np.maximum(X @ params["W1"].data + params["b1"].data, 0.0)
    h = np.maximum(h @ params["W2"].data + params["b2"].data, 0.0)
    h = np.maximum(h @ params["W3"].data + params["b3"].data, 0.0)
    z = h @ params["W4"].data + params["b4"].data
    return 1.0 / (1.0 + np.exp(-z))


def fit_ae(
    X_train: np.ndarray,
    preset: str = "declaration",
    seed: int = 0,
    batch_size: int = 32,
    max_epochs: int = 50,
    patience: int = 8,
    threshold_percentile: float = 98.4,
    train_loss: str = "mae",
) -> AutoencoderModel:
    """Train on min-max-scaled rows and set the error threshold at the
    nearest-rank percentile of the training reconstruction errors.

    Inputs must already lie in [0, 1]: the sigmoid output layer cannot
    reach values outside that range.
    """
    X = np.asarray(X_train, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ArgumentError(f"need a non-empty 2-d matrix, got shape {X.shape}")
    if preset not in PRESET_WIDTHS:
        raise ArgumentError(f"unknown preset {preset!r}")
    if train_loss not in ("mae", "mse"):
        raise ArgumentError(f"train_loss must be 'mae' or 'mse', got {train_loss!r}")
    if X.min() < -1e-9 or X.max() > 1.0 + 1e-9:
        raise PreconditionError(
            f"inputs outside [0, 1]: min {X.min():.6g}, max {X.max():.6g}; "
            "min-max scale the matrix first"
        )

    hidden = PRESET_WIDTHS[preset]
    opt_kind, lr = PRESET_OPTIMIZER[preset]
    rng = np.random.default_rng(seed)
    params = _init_params(X.shape[1], hidden, rng)
    optimizer = nnet.Optimizer(params, kind=opt_kind, learning_rate=lr)
    stopper = nnet.EarlyStopper(patience)

    for _ in range(max_epochs):
        total, count = 0.0, 0
        for batch in nnet.sequential_batches(X.shape[0], batch_size):
            xb = X[batch]
            recon = _forward_graph(params, xb)
            diff = ad.sub(recon, Tensor(xb))
            loss = ad.mean(ad.abs_(diff)) if train_loss == "mae" else ad.mean(ad.mul(diff, diff))
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss.data) * len(batch)
            count += len(batch)
        # early stopping monitors the epoch-mean training loss; the fit
        # split is used whole, no hidden validation carve-out
        if stopper.update(total / count, params):
            break
    stopper.restore(params)

    model = AutoencoderModel(
        params=params,
        input_width=X.shape[1],
        hidden_widths=hidden,
        optimizer_kind=opt_kind,
        learning_rate=lr,
        error_threshold=np.nan,
        threshold_percentile=threshold_percentile,
        preset=preset,
        train_loss=train_loss,
    )
    errors = reconstruction_errors(model, X)
    model.error_threshold = nearest_rank_percentile(errors, threshold_percentile)
    return model


def reconstruction_errors(model: AutoencoderModel, X: np.ndarray) -> np.ndarray:
    """Per-row mean absolute error between input and reconstruction."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.input_width:
        raise ArgumentError(
            f"expected [n, {model.input_width}] matrix, got shape {X.shape}"
        )
    return np.abs(X - _forward_np(model.params, X)).mean(axis=1)


def reconstruction_error(model: AutoencoderModel, x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.input_width:
        raise ArgumentError(
            f"expected a vector of length {model.input_width}, got shape {x.shape}"
        )
    return float(reconstruction_errors(model, x[None, :])[0])


def pseudo_label_ae(model: AutoencoderModel, X: np.ndarray) -> PseudoLabelSet:
    """Label rows whose error strictly exceeds the fitted threshold."""
    if not np.isfinite(model.error_threshold):
        raise ArgumentError("model has no fitted error threshold")
    errors = reconstruction_errors(model, X)
    labels = (errors > model.error_threshold).astype(np.int8)
    return PseudoLabelSet(
        scores=errors,
        labels=labels,
        threshold=model.error_threshold,
        source="autoencoder",
    )


def save_model(model: AutoencoderModel, path: str | Path) -> None:
    nnet.save_params(
        model.params,
        path,
        extra={
            "kind": "autoencoder",
            "input_width": model.input_width,
            "hidden_widths": list(model.hidden_widths),
            "optimizer_kind": model.optimizer_kind,
            "learning_rate": model.learning_rate,
            "error_threshold": model.error_threshold,
            "threshold_percentile": model.threshold_percentile,
            "preset": model.preset,
            "train_loss": model.train_loss,
        },
    )


def load_model(path: str | Path) -> AutoencoderModel:
    params, extra = nnet.load_params(path)
    return AutoencoderModel(
        params=params,
        input_width=extra["input_width"],
        hidden_widths=tuple(extra["hidden_widths"]),
        optimizer_kind=extra["optimizer_kind"],
        learning_rate=extra["learning_rate"],
        error_threshold=extra["error_threshold"],
        threshold_percentile=extra["threshold_percentile"],
        preset=extra["preset"],
        train_loss=extra.get("train_loss", "mae"),
    )
