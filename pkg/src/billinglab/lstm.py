"""Stacked-LSTM sequence classifier.

One or two LSTM layers (hidden width 64 by default) unrolled over a
window, with inverted dropout between layers during training, and a
dense head that reads only the final timestep's top-layer hidden state.
Gate blocks are laid out [input, forget, cell, output] along the last
axis of the packed weight matrices.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import nnet
from .autodiff import Tensor
from .errors import ShapeError


class LstmClassifier:
    def __init__(
        self,
        input_size: int,
        hidden_size: int = 64,
        num_layers: int = 2,
        dropout: float = 0.5,
        seed: int = 0,
    ):
        if num_layers not in (1, 2):
            raise ShapeError(f"num_layers must be 1 or 2, got {num_layers}")
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        # dropout only applies between stacked layers
        self.dropout = dropout if num_layers > 1 else 0.0
        rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        for layer in range(num_layers):
            in_width = input_size if layer == 0 else hidden_size
            self.params[f"Wx{layer}"] = nnet.init_uniform(rng, (in_width, 4 * hidden_size), in_width)
            self.params[f"Wh{layer}"] = nnet.init_uniform(rng, (hidden_size, 4 * hidden_size), hidden_size)
            self.params[f"b{layer}"] = nnet.zeros_param((4 * hidden_size,))
        self.params["W_head"] = nnet.init_uniform(rng, (hidden_size, 1), hidden_size)
        self.params["b_head"] = nnet.zeros_param((1,))

    def _cell(self, x_t: Tensor, h: Tensor, c: Tensor, layer: int) -> tuple[Tensor, Tensor]:
        hh = self.hidden_size
        z = ad.add(
            ad.add(ad.matmul(x_t, self.params[f"Wx{layer}"]), ad.matmul(h, self.params[f"Wh{layer}"])),
            self.params[f"b{layer}"],
        )
        i = ad.sigmoid(z[:, 0 * hh : 1 * hh])
        f = ad.sigmoid(z[:, 1 * hh : 2 * hh])
        g = ad.tanh(z[:, 2 * hh : 3 * hh])
        o = ad.sigmoid(z[:, 3 * hh : 4 * hh])
        c_next = ad.add(ad.mul(f, c), ad.mul(i, g))
        h_next = ad.mul(o, ad.tanh(c_next))
        return h_next, c_next

    def forward(
        self,
        windows: np.ndarray,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        """Run the recurrence over [batch, window, features]; returns the
        per-window logit vector [batch]."""
        windows = np.asarray(windows, dtype=np.float64)
        if windows.ndim != 3 or windows.shape[2] != self.input_size:
            raise ShapeError(
                f"expected windows [batch, T, {self.input_size}], got {windows.shape}"
            )
        batch, steps, _ = windows.shape
        inputs: list[Tensor] = [Tensor(windows[:, t, :]) for t in range(steps)]
        for layer in range(self.num_layers):
            h = Tensor(np.zeros((batch, self.hidden_size)))
            c = Tensor(np.zeros((batch, self.hidden_size)))
            outputs: list[Tensor] = []
            for t in range(steps):
                h, c = self._cell(inputs[t], h, c, layer)
                outputs.append(h)
            if layer < self.num_layers - 1 and self.dropout > 0:
                outputs = [ad.dropout(o, self.dropout, train, rng) for o in outputs]
            inputs = outputs
        final = inputs[-1]
        logits = ad.add(ad.matmul(final, self.params["W_head"]), self.params["b_head"])
        return ad.reshape(logits, (batch,))
