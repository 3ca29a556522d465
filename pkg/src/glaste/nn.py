"""Minimal module system: named parameters, freezing, dtype casts."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Tensor):
                        yield f"{full}.{i}", item
            elif isinstance(value, dict):
                for key, item in value.items():
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{key}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def trainable(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        return [(n, p) for n, p in self.named_parameters(prefix) if p.requires_grad]

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None

    def unfreeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = True

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def cast(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def param(data: np.ndarray) -> Tensor:
    return Tensor(data.astype(np.float32), requires_grad=True)


class Conv2d(Module):
    def __init__(self, rng: np.random.Generator, cin: int, cout: int, k=3, stride=1, pad=None, gain: float = 2.0):
        kh, kw = (k, k) if isinstance(k, int) else k
        if pad is None:
            pad = (kh // 2, kw // 2)
        fan_in = cin * kh * kw
        self.weight = param(rng.normal(0.0, np.sqrt(gain / fan_in), size=(cout, cin, kh, kw)))
        self.bias = param(np.zeros(cout))
        self._stride, self._pad = stride, pad

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=self._stride, pad=self._pad)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, din: int, dout: int, std: float | None = None):
        std = np.sqrt(1.0 / din) if std is None else std
        self.weight = param(rng.normal(0.0, std, size=(dout, din)))
        self.bias = param(np.zeros(dout))

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)
