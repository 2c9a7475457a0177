"""Dense, Elman, GRU and LSTM layers with hand-written backpropagation.

Recurrent layers take ``(batch, time, features)`` input, start every sequence
from a zero state and return the full state sequence. Each layer keeps its
parameters in ``params`` and, after ``backward``, their gradients in
``grads`` under the same keys. ``W`` is always the input kernel (the only
weight the L2 penalty touches), ``U`` the recurrent kernel and ``b`` the bias.
"""

from __future__ import annotations

import numpy as np


def sigmoid(x):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_grad(a, out):
    return (a > 0).astype(a.dtype)


def _tanh_grad(a, out):
    return 1.0 - out * out


def _identity_grad(a, out):
    return np.ones_like(a)


ACTIVATIONS = {
    "relu": (_relu, _relu_grad),
    "tanh": (np.tanh, _tanh_grad),
    "linear": (lambda x: x, _identity_grad),
}


def activation(name: str):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}") from None


# -- single-step reference forms ------------------------------------------------

def dense_layer(W, b, x, act: str = "linear", scale: float = 1.0):
    """``act(scale * (x @ W + b))``. ``scale`` only exists for the tanh(0.5 * .) worked examples."""
    W = np.atleast_2d(np.asarray(W, dtype=float))
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[-1] != W.shape[0]:
        raise ValueError(f"input width {x.shape[-1]} does not match kernel {W.shape}")
    f, _ = activation(act)
    return f(scale * (x @ W + np.asarray(b, dtype=float)))


def simple_rnn_step(W, U, b, x_t, s_prev, act: str = "tanh", scale: float = 1.0):
    """Elman state update ``act(scale * (x W + s U + b))``."""
    f, _ = activation(act)
    x_t = np.atleast_1d(np.asarray(x_t, dtype=float))
    s_prev = np.atleast_1d(np.asarray(s_prev, dtype=float))
    return f(scale * (x_t @ np.atleast_2d(W) + s_prev @ np.atleast_2d(U) + np.asarray(b, dtype=float)))


def gru_step(params: dict, x_t, h_prev, act: str = "tanh"):
    """One GRU update (Cho et al. ordering, reset applied before the recurrent kernel).

    z = sig(x Wz + h Uz + bz), r = sig(x Wr + h Ur + br),
    h~ = act(x Wh + (r * h) Uh + bh), h' = (1 - z) * h + z * h~.
    Gate blocks are stacked [z | r | h] along the last axis of W, U, b.
    """
    W, U, b = params["W"], params["U"], params["b"]
    n = U.shape[0]
    f, _ = activation(act)
    x_t = np.atleast_1d(np.asarray(x_t, dtype=float))
    h_prev = np.atleast_1d(np.asarray(h_prev, dtype=float))
    xw = x_t @ W + b
    zr = sigmoid(xw[..., : 2 * n] + h_prev @ U[:, : 2 * n])
    z, r = zr[..., :n], zr[..., n:]
    cand = f(xw[..., 2 * n:] + (r * h_prev) @ U[:, 2 * n:])
    return (1.0 - z) * h_prev + z * cand


def lstm_step(params: dict, x_t, h_prev, c_prev, act: str = "tanh"):
    """One LSTM update; gate blocks stacked [i | f | c~ | o]. Returns ``(h, c)``."""
    W, U, b = params["W"], params["U"], params["b"]
    n = U.shape[0]
    f_act, _ = activation(act)
    x_t = np.atleast_1d(np.asarray(x_t, dtype=float))
    a = x_t @ W + np.atleast_1d(np.asarray(h_prev, dtype=float)) @ U + b
    i = sigmoid(a[..., :n])
    fg = sigmoid(a[..., n:2 * n])
    g = f_act(a[..., 2 * n:3 * n])
    o = sigmoid(a[..., 3 * n:])
    c = fg * c_prev + i * g
    return o * f_act(c), c


# -- trainable layers -------------------------------------------------------------

class Layer:
    params: dict
    grads: dict

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grads(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}


class Dense(Layer):
    """Fully connected layer acting on the last axis."""

    def __init__(self, W, b, act: str = "relu"):
        self.params = {"W": W, "b": b}
        self.act = act
        self._f, self._df = activation(act)
        self.zero_grads()

    def forward(self, x):
        a = x @ self.params["W"] + self.params["b"]
        out = self._f(a)
        self._cache = (x, a, out)
        return out

    def backward(self, dout):
        x, a, out = self._cache
        da = dout * self._df(a, out)
        n_in = x.shape[-1]
        self.grads["W"] = x.reshape(-1, n_in).T @ da.reshape(-1, da.shape[-1])
        self.grads["b"] = da.reshape(-1, da.shape[-1]).sum(axis=0)
        return da @ self.params["W"].T


class SimpleRNN(Layer):
    def __init__(self, W, U, b, act: str = "relu"):
        self.params = {"W": W, "U": U, "b": b}
        self.act = act
        self._f, self._df = activation(act)
        self.zero_grads()

    def forward(self, x):
        W, U, b = self.params["W"], self.params["U"], self.params["b"]
        B, T, _ = x.shape
        n = U.shape[0]
        xw = x @ W + b
        a = np.empty((B, T, n))
        hs = np.empty((B, T + 1, n))
        hs[:, 0] = 0.0
        for t in range(T):
            a[:, t] = xw[:, t] + hs[:, t] @ U
            hs[:, t + 1] = self._f(a[:, t])
        self._cache = (x, a, hs)
        return hs[:, 1:]

    def backward(self, dout):
        x, a, hs = self._cache
        W, U = self.params["W"], self.params["U"]
        B, T, _ = x.shape
        da_all = np.empty_like(a)
        dh = np.zeros((B, U.shape[0]))
        for t in range(T - 1, -1, -1):
            dh = dh + dout[:, t]
            da = dh * self._df(a[:, t], hs[:, t + 1])
            da_all[:, t] = da
            dh = da @ U.T
        n = U.shape[0]
        self.grads["U"] = hs[:, :-1].reshape(-1, n).T @ da_all.reshape(-1, n)
        self.grads["W"] = x.reshape(B * T, -1).T @ da_all.reshape(-1, n)
        self.grads["b"] = da_all.sum(axis=(0, 1))
        return da_all @ W.T


class GRU(Layer):
    def __init__(self, W, U, b, act: str = "relu"):
        self.params = {"W": W, "U": U, "b": b}
        self.act = act
        self._f, self._df = activation(act)
        self.zero_grads()

    def forward(self, x):
        W, U, b = self.params["W"], self.params["U"], self.params["b"]
        B, T, _ = x.shape
        n = U.shape[0]
        xw = x @ W + b
        Uzr, Uh = U[:, : 2 * n], U[:, 2 * n:]
        hs = np.empty((B, T + 1, n))
        hs[:, 0] = 0.0
        zr = np.empty((B, T, 2 * n))
        ah = np.empty((B, T, n))
        cand = np.empty((B, T, n))
        for t in range(T):
            h = hs[:, t]
            zr[:, t] = sigmoid(xw[:, t, : 2 * n] + h @ Uzr)
            r = zr[:, t, n:]
            ah[:, t] = xw[:, t, 2 * n:] + (r * h) @ Uh
            cand[:, t] = self._f(ah[:, t])
            z = zr[:, t, :n]
            hs[:, t + 1] = h + z * (cand[:, t] - h)
        self._cache = (x, hs, zr, ah, cand)
        return hs[:, 1:]

    def backward(self, dout):
        x, hs, zr, ah, cand = self._cache
        W, U = self.params["W"], self.params["U"]
        B, T, _ = x.shape
        n = U.shape[0]
        Uz, Ur, Uh = U[:, :n], U[:, n:2 * n], U[:, 2 * n:]
        dgates = np.empty((B, T, 3 * n))
        dUh = np.zeros((n, n))
        dh = np.zeros((B, n))
        for t in range(T - 1, -1, -1):
            dh = dh + dout[:, t]
            h = hs[:, t]
            z, r = zr[:, t, :n], zr[:, t, n:]
            c = cand[:, t]
            dz = dh * (c - h)
            dah = dh * z * self._df(ah[:, t], c)
            drh = dah @ Uh.T
            dUh += (r * h).T @ dah
            daz = dz * z * (1.0 - z)
            dar = drh * h * r * (1.0 - r)
            dgates[:, t, :n] = daz
            dgates[:, t, n:2 * n] = dar
            dgates[:, t, 2 * n:] = dah
            dh = dh * (1.0 - z) + drh * r + daz @ Uz.T + dar @ Ur.T
        hprev = hs[:, :-1].reshape(-1, n)
        dUzr = hprev.T @ dgates[:, :, : 2 * n].reshape(-1, 2 * n)
        self.grads["U"] = np.concatenate([dUzr, dUh], axis=1)
        self.grads["W"] = x.reshape(B * T, -1).T @ dgates.reshape(-1, 3 * n)
        self.grads["b"] = dgates.sum(axis=(0, 1))
        return dgates @ W.T


class LSTM(Layer):
    def __init__(self, W, U, b, act: str = "relu"):
        self.params = {"W": W, "U": U, "b": b}
        self.act = act
        self._f, self._df = activation(act)
        self.zero_grads()

    def forward(self, x):
        W, U, b = self.params["W"], self.params["U"], self.params["b"]
        B, T, _ = x.shape
        n = U.shape[0]
        xw = x @ W + b
        hs = np.empty((B, T + 1, n))
        cs = np.empty((B, T + 1, n))
        hs[:, 0] = 0.0
        cs[:, 0] = 0.0
        gates = np.empty((B, T, 4 * n))  # activated i, f, g, o
        ag = np.empty((B, T, n))  # candidate pre-activation
        fc = np.empty((B, T, n))  # act(c)
        for t in range(T):
            a = xw[:, t] + hs[:, t] @ U
            ifo = sigmoid(a[:, np.r_[0:2 * n, 3 * n:4 * n]])
            gates[:, t, : 2 * n] = ifo[:, : 2 * n]
            gates[:, t, 3 * n:] = ifo[:, 2 * n:]
            ag[:, t] = a[:, 2 * n:3 * n]
            gates[:, t, 2 * n:3 * n] = self._f(ag[:, t])
            i, f, g, o = (gates[:, t, k * n:(k + 1) * n] for k in range(4))
            cs[:, t + 1] = f * cs[:, t] + i * g
            fc[:, t] = self._f(cs[:, t + 1])
            hs[:, t + 1] = o * fc[:, t]
        self._cache = (x, hs, cs, gates, ag, fc)
        return hs[:, 1:]

    def backward(self, dout):
        x, hs, cs, gates, ag, fc = self._cache
        W, U = self.params["W"], self.params["U"]
        B, T, _ = x.shape
        n = U.shape[0]
        da_all = np.empty((B, T, 4 * n))
        dh = np.zeros((B, n))
        dc = np.zeros((B, n))
        for t in range(T - 1, -1, -1):
            dh = dh + dout[:, t]
            i, f, g, o = (gates[:, t, k * n:(k + 1) * n] for k in range(4))
            do = dh * fc[:, t]
            dc = dc + dh * o * self._df(cs[:, t + 1], fc[:, t])
            di = dc * g
            dg = dc * i
            df = dc * cs[:, t]
            dc = dc * f
            da_all[:, t, :n] = di * i * (1.0 - i)
            da_all[:, t, n:2 * n] = df * f * (1.0 - f)
            da_all[:, t, 2 * n:3 * n] = dg * self._df(ag[:, t], g)
            da_all[:, t, 3 * n:] = do * o * (1.0 - o)
            dh = da_all[:, t] @ U.T
        self.grads["U"] = hs[:, :-1].reshape(-1, n).T @ da_all.reshape(-1, 4 * n)
        self.grads["W"] = x.reshape(B * T, -1).T @ da_all.reshape(-1, 4 * n)
        self.grads["b"] = da_all.sum(axis=(0, 1))
        return da_all @ W.T


RECURRENT = {"simple_rnn": (SimpleRNN, 1), "gru": (GRU, 3), "lstm": (LSTM, 4)}
