"""Stacked forecaster: hidden layers of one type followed by a linear output unit."""

from __future__ import annotations

import numpy as np

from .layers import RECURRENT, Dense
from .optim import he_normal_init

MODEL_TYPES = ("dense", "simple_rnn", "gru", "lstm")


class Network:
    """Dense or recurrent network emitting one value per row (or per timestep).

    Dense networks take ``(rows, width)`` input; recurrent ones take
    ``(sequences, timesteps, width)`` and return every timestep's output.
    """

    def __init__(self, model_type: str, n_inputs: int, nlayers: int, nnodes: int,
                 seed=0, act: str = "relu"):
        if model_type not in MODEL_TYPES:
            raise ValueError(f"model_type must be one of {MODEL_TYPES}")
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.model_type = model_type
        self.layers = []
        fan_in = n_inputs
        for _ in range(nlayers):
            if model_type == "dense":
                layer = Dense(he_normal_init(fan_in, (fan_in, nnodes), rng), np.zeros(nnodes), act)
            else:
                cls, k = RECURRENT[model_type]
                layer = cls(he_normal_init(fan_in, (fan_in, k * nnodes), rng),
                            he_normal_init(nnodes, (nnodes, k * nnodes), rng),
                            np.zeros(k * nnodes), act)
            self.layers.append(layer)
            fan_in = nnodes
        self.layers.append(Dense(he_normal_init(fan_in, (fan_in, 1), rng), np.zeros(1), "linear"))

    @property
    def recurrent(self) -> bool:
        return self.model_type != "dense"

    def named_params(self) -> dict:
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.params.items()}

    def named_grads(self) -> dict:
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.grads.items()}

    def penalized(self) -> list[np.ndarray]:
        """Input kernels of the hidden layers."""
        return [layer.params["W"] for layer in self.layers[:-1]]

    def n_params(self) -> int:
        return sum(layer.n_params() for layer in self.layers)

    def forward(self, X):
        h = np.asarray(X, dtype=float)
        for layer in self.layers:
            h = layer.forward(h)
        return h[..., 0]

    predict = forward

    def backward(self, dpred):
        d = dpred[..., None]
        for layer in reversed(self.layers):
            d = layer.backward(d)
        return d

    def penalty(self, kernel_l2: float) -> float:
        if kernel_l2 == 0:
            return 0.0
        return kernel_l2 * sum(float(np.sum(W * W)) for W in self.penalized())

    def loss(self, X, y, kernel_l2: float = 0.0) -> float:
        """Mean absolute error plus ``kernel_l2 * sum(W**2)`` over hidden input kernels."""
        pred = self.forward(X)
        return float(np.mean(np.abs(pred - y))) + self.penalty(kernel_l2)

    def loss_and_grads(self, X, y, kernel_l2: float = 0.0):
        pred = self.forward(X)
        diff = pred - y
        loss = float(np.mean(np.abs(diff))) + self.penalty(kernel_l2)
        self.backward(np.sign(diff) / diff.size)
        if kernel_l2:
            for layer in self.layers[:-1]:
                layer.grads["W"] = layer.grads["W"] + 2.0 * kernel_l2 * layer.params["W"]
        return loss, self.named_grads()

    def get_weights(self) -> dict:
        return {k: v.copy() for k, v in self.named_params().items()}

    def set_weights(self, weights: dict) -> None:
        for name, p in self.named_params().items():
            p[...] = weights[name]
