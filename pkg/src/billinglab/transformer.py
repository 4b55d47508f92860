"""Transformer encoder classifier with two-branch attention.

Each encoder block computes a learned *series* association (row-softmax
of scaled query-key products) that drives the attention output, plus a
*prior* association from a per-position, per-head Gaussian kernel over
temporal distance whose width sigma is predicted from the block input
(softplus + 0.1 keeps it positive). The prior is inert unless the
symmetric-KL discrepancy between the two associations is added to the
training loss with a nonzero weight.

Blocks are post-norm: residual then layer norm around both the
attention and the gelu feed-forward sublayers. The classification head
reads only the final timestep's embedding.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from . import nnet
from .autodiff import Tensor
from .errors import ShapeError

KL_FLOOR = 1e-12
SIGMA_FLOOR = 0.1


def sinusoidal_encoding(window_size: int, d_model: int) -> np.ndarray:
    """Fixed sine/cosine positional table [window_size, d_model]."""
    position = np.arange(window_size)[:, None].astype(np.float64)
    dim = np.arange(0, d_model, 2).astype(np.float64)
    angle = position / np.power(10000.0, dim / d_model)
    table = np.zeros((window_size, d_model))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : table[:, 1::2].shape[1]])
    return table


def anomaly_attention(
    q: Tensor, k: Tensor, v: Tensor, sigma: Tensor
) -> tuple[Tensor, Tensor, Tensor]:
    """Two-association attention on [batch, heads, window, d_head] inputs.

    sigma is [batch, heads, window, 1] (one positive scale per query
    position per head). Returns (output, series S, prior P); both
    association matrices are row-stochastic and the output uses S only.
    """
    d_head = q.shape[-1]
    window = q.shape[-2]
    scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(d_head))
    series = ad.softmax(scores)

    offsets = np.arange(window, dtype=np.float64)
    dist2 = (offsets[:, None] - offsets[None, :]) ** 2
    dist2 = Tensor(dist2[None, None, :, :])
    kernel = ad.exp(ad.neg(ad.div(dist2, ad.mul(ad.mul(sigma, sigma), 2.0))))
    prior = ad.div(kernel, ad.sum_(kernel, axis=-1, keepdims=True))

    return ad.matmul(series, v), series, prior


def association_discrepancy(priors, series) -> Tensor:
    """Mean symmetric KL between prior and series association rows,
    averaged over positions, heads, layers (and batch). Logs are floored
    at 1e-12 so zero entries stay finite."""
    if len(priors) != len(series) or not priors:
        raise ShapeError(
            f"need matching non-empty association lists, got {len(priors)} and {len(series)}"
        )
    per_layer = []
    for p_raw, s_raw in zip(priors, series):
        p, s = ad.as_tensor(p_raw), ad.as_tensor(s_raw)
        log_p = ad.log(ad.clip_min(p, KL_FLOOR))
        log_s = ad.log(ad.clip_min(s, KL_FLOOR))
        kl_ps = ad.sum_(ad.mul(p, ad.sub(log_p, log_s)), axis=-1)
        kl_sp = ad.sum_(ad.mul(s, ad.sub(log_s, log_p)), axis=-1)
        per_layer.append(ad.mean(ad.add(kl_ps, kl_sp)))
    total = per_layer[0]
    for t in per_layer[1:]:
        total = ad.add(total, t)
    return ad.mul(total, 1.0 / len(per_layer))


class AnomalyTransformerClassifier:
    def __init__(
        self,
        input_size: int,
        d_model: int = 64,
        n_heads: int = 8,
        n_layers: int = 3,
        d_ff: int = 512,
        seed: int = 0,
    ):
        if d_model % n_heads:
            raise ShapeError(f"d_model {d_model} not divisible by n_heads {n_heads}")
        self.input_size = input_size
        self.d_model = d_model
        self.n_heads = n_heads
        self.n_layers = n_layers
        self.d_ff = d_ff
        self.d_head = d_model // n_heads
        rng = np.random.default_rng(seed)
        p: dict[str, Tensor] = {}
        p["W_embed"] = nnet.init_uniform(rng, (input_size, d_model), input_size)
        p["b_embed"] = nnet.zeros_param((d_model,))
        for i in range(n_layers):
            for name in ("q", "k", "v", "o"):
                p[f"W{name}{i}"] = nnet.init_uniform(rng, (d_model, d_model), d_model)
                p[f"b{name}{i}"] = nnet.zeros_param((d_model,))
            p[f"W_sigma{i}"] = nnet.init_uniform(rng, (d_model, n_heads), d_model)
            p[f"b_sigma{i}"] = nnet.zeros_param((n_heads,))
            p[f"W_ff1_{i}"] = nnet.init_uniform(rng, (d_model, d_ff), d_model)
            p[f"b_ff1_{i}"] = nnet.zeros_param((d_ff,))
            p[f"W_ff2_{i}"] = nnet.init_uniform(rng, (d_ff, d_model), d_ff)
            p[f"b_ff2_{i}"] = nnet.zeros_param((d_model,))
            p[f"ln1_g{i}"] = Tensor(np.ones(d_model), requires_grad=True)
            p[f"ln1_b{i}"] = nnet.zeros_param((d_model,))
            p[f"ln2_g{i}"] = Tensor(np.ones(d_model), requires_grad=True)
            p[f"ln2_b{i}"] = nnet.zeros_param((d_model,))
        p["W_head"] = nnet.init_uniform(rng, (d_model, 1), d_model)
        p["b_head"] = nnet.zeros_param((1,))
        self.params = p

    def _project_heads(self, x: Tensor, w: Tensor, b: Tensor, batch: int, window: int) -> Tensor:
        proj = ad.add(ad.matmul(x, w), b)
        proj = ad.reshape(proj, (batch, window, self.n_heads, self.d_head))
        return ad.transpose(proj, (0, 2, 1, 3))

    def encode(
        self, windows: np.ndarray
    ) -> tuple[Tensor, list[Tensor], list[Tensor]]:
        """Embed + positional-encode, run all encoder blocks; returns the
        final embeddings [batch, window, d_model] plus per-layer prior
        and series association matrices."""
        windows = np.asarray(windows, dtype=np.float64)
        if windows.ndim != 3 or windows.shape[2] != self.input_size:
            raise ShapeError(
                f"expected windows [batch, T, {self.input_size}], got {windows.shape}"
            )
        batch, window, _ = windows.shape
        x = ad.add(ad.matmul(Tensor(windows), self.params["W_embed"]), self.params["b_embed"])
        x = ad.add(x, Tensor(sinusoidal_encoding(window, self.d_model)[None, :, :]))

        priors: list[Tensor] = []
        series_list: list[Tensor] = []
        for i in range(self.n_layers):
            q = self._project_heads(x, self.params[f"Wq{i}"], self.params[f"bq{i}"], batch, window)
            k = self._project_heads(x, self.params[f"Wk{i}"], self.params[f"bk{i}"], batch, window)
            v = self._project_heads(x, self.params[f"Wv{i}"], self.params[f"bv{i}"], batch, window)
            sigma_raw = ad.add(ad.matmul(x, self.params[f"W_sigma{i}"]), self.params[f"b_sigma{i}"])
            sigma = ad.add(ad.softplus(sigma_raw), SIGMA_FLOOR)  # [B, T, H]
            sigma = ad.reshape(ad.transpose(sigma, (0, 2, 1)), (batch, self.n_heads, window, 1))
            attn, series, prior = anomaly_attention(q, k, v, sigma)
            priors.append(prior)
            series_list.append(series)
            attn = ad.reshape(ad.transpose(attn, (0, 2, 1, 3)), (batch, window, self.d_model))
            attn = ad.add(ad.matmul(attn, self.params[f"Wo{i}"]), self.params[f"bo{i}"])
            x = ad.layer_norm(ad.add(x, attn))
            x = ad.add(ad.mul(x, self.params[f"ln1_g{i}"]), self.params[f"ln1_b{i}"])
            ff = ad.gelu(ad.add(ad.matmul(x, self.params[f"W_ff1_{i}"]), self.params[f"b_ff1_{i}"]))
            ff = ad.add(ad.matmul(ff, self.params[f"W_ff2_{i}"]), self.params[f"b_ff2_{i}"])
            x = ad.layer_norm(ad.add(x, ff))
            x = ad.add(ad.mul(x, self.params[f"ln2_g{i}"]), self.params[f"ln2_b{i}"])
        return x, priors, series_list

    def head(self, embeddings: Tensor) -> Tensor:
        """Logit from the final position's embedding only."""
        final = embeddings[:, -1, :]
        logits = ad.add(ad.matmul(final, self.params["W_head"]), self.params["b_head"])
        return ad.reshape(logits, (logits.shape[0],))

    def forward(
        self,
        windows: np.ndarray,
        train: bool = False,
        rng: np.random.Generator | None = None,
        return_associations: bool = False,
    ):
        del train, rng  # no dropout in this architecture
        embeddings, priors, series = self.encode(windows)
        logits = self.head(embeddings)
        if return_associations:
            return logits, priors, series
        return logits
