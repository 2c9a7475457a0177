"""He-normal initialization and the AMSGrad optimizer with learning-rate decay."""

from __future__ import annotations

import numpy as np


def he_normal_init(fan_in: int, shape, seed=None) -> np.ndarray:
    """I.i.d. N(0, 2 / fan_in) draws. ``seed`` may be an int or a Generator."""
    if fan_in < 1:
        raise ValueError("fan_in must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class AMSGrad:
    """Adam with the running-max second moment.

    Matches the Keras formulation: the bias correction is folded into the
    step size, ``lr_t = lr_eff * sqrt(1 - beta2**t) / (1 - beta1**t)``, and the
    update is ``lr_t * m / (sqrt(vhat) + eps)`` with ``vhat = max(vhat, v)``.
    The effective rate is ``lr / (1 + decay * decay_t)``; ``decay_t`` defaults
    to the update counter but the trainer advances it once per epoch.
    """

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-7, decay: float = 1e-4):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.decay = decay
        self.t = 0
        self.decay_t: int | None = None
        self.m: dict = {}
        self.v: dict = {}
        self.vhat: dict = {}

    def effective_lr(self) -> float:
        dt = self.t if self.decay_t is None else self.decay_t
        return self.lr / (1.0 + self.decay * dt)

    def step(self, params: dict, grads: dict) -> None:
        """Update ``params`` in place."""
        self.t += 1
        t = self.t
        lr_t = self.effective_lr() * np.sqrt(1.0 - self.beta2 ** t) / (1.0 - self.beta1 ** t)
        for k, p in params.items():
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
                self.vhat[k] = np.zeros_like(p)
            m, v, vh = self.m[k], self.v[k], self.vhat[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            np.maximum(vh, v, out=vh)
            p -= lr_t * m / (np.sqrt(vh) + self.eps)


def amsgrad_step(opt: AMSGrad, params: dict, grads: dict) -> dict:
    """Functional wrapper: one optimizer step, returns ``params`` for chaining."""
    opt.step(params, grads)
    return params
