"""Adam with bias correction."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Tensor


class NonFiniteGradientError(FloatingPointError):
    pass


class Adam:
    """Adam over a fixed, ordered list of named parameters.

    Moment buffers are float arrays keyed by parameter name so they can be
    checkpointed next to the weights.
    """

    def __init__(
        self,
        params: Sequence[tuple[str, Tensor]],
        lr: float = 1e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self) -> None:
        # validate everything first so a rejected step leaves no partial update
        for name, p in self.params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                bad = int(np.size(p.grad) - np.count_nonzero(np.isfinite(p.grad)))
                raise NonFiniteGradientError(f"step rejected: {bad} non-finite gradient entries in {name!r}")
        self.t += 1
        grads = [(name, p, p.grad) for name, p in self.params if p.grad is not None]
        for name, p, g in grads:
            p.data = adam_update(p.data, g, self.m[name], self.v[name], self.lr, self.beta1, self.beta2, self.eps, self.t)


def adam_update(param, grad, m, v, lr, beta1, beta2, eps, t):
    """One in-place moment update; returns the new parameter array.

    ``m`` and ``v`` are modified in place.
    """
    if t < 1:
        raise ValueError("Adam step counter must start at 1")
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return (param - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype)
