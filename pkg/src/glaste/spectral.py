"""Real 2-D FFT, its inverse, and the Fourier-convolution residual block.

Spectra are stored as real tensors [N, 2C, H, W//2+1]: channels ``0..C`` carry
the real parts and ``C..2C`` the imaginary parts.  The forward transform is
unnormalized; the inverse carries ``1/(H*W)``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .functional import conv2d
from .tensor import ContractError, DimensionError, Function, Tensor, leaky_relu


class UnsupportedSizeError(ContractError):
    pass


def _is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft_last(x: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Unnormalized radix-2 DFT along the last axis (sign +1 when ``inverse``)."""
    n = x.shape[-1]
    if not _is_pow2(n):
        raise UnsupportedSizeError(f"FFT length {n} is not a power of two")
    a = np.asarray(x, dtype=np.complex128)[..., _bit_reverse(n)]
    lead = a.shape[:-1]
    sign = 1.0 if inverse else -1.0
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(sign * 2j * np.pi * np.arange(half) / size)
        blocks = a.reshape(*lead, n // size, size)
        even = blocks[..., :half]
        odd = blocks[..., half:] * tw
        a = np.concatenate([even + odd, even - odd], axis=-1).reshape(*lead, n)
        size *= 2
    return a


def fft2(x: np.ndarray, inverse: bool = False) -> np.ndarray:
    a = fft_last(x, inverse)
    return np.swapaxes(fft_last(np.swapaxes(a, -1, -2), inverse), -1, -2)


def rfft2_complex(x: np.ndarray) -> np.ndarray:
    """Half spectrum [..., H, W//2+1] of a real array."""
    h, w = x.shape[-2:]
    if not (_is_pow2(h) and _is_pow2(w)):
        raise UnsupportedSizeError(f"rfft2 needs power-of-two extents, got {h}x{w}")
    half = fft_last(x)[..., : w // 2 + 1]
    return np.swapaxes(fft_last(np.swapaxes(half, -1, -2)), -1, -2)


def _hermitian_weights(w: int) -> np.ndarray:
    c = np.full(w // 2 + 1, 2.0)
    c[0] = 1.0
    c[-1] = 1.0
    return c


def _half_to_real(z: np.ndarray, w: int) -> np.ndarray:
    """Re(sum over the half spectrum of z * e^{+i phi}) on a full H x W grid."""
    full = np.zeros(z.shape[:-1] + (w,), dtype=np.complex128)
    full[..., : z.shape[-1]] = z
    return fft2(full, inverse=True).real


class RFFT2(Function):
    def forward(self, x):
        n, c, h, w = x.shape
        self.shape = x.shape
        spec = rfft2_complex(x)
        return np.concatenate([spec.real, spec.imag], axis=1).astype(x.dtype)

    def backward(self, g):
        c, w = self.shape[1], self.shape[3]
        z = g[:, :c] + 1j * g[:, c:]
        return (_half_to_real(z, w).astype(g.dtype),)


class IRFFT2(Function):
    def forward(self, x, out_w):
        n, c2, h, wh = x.shape
        if c2 % 2:
            raise DimensionError(f"spectrum needs an even channel count, got {c2}")
        if out_w < 2 or not _is_pow2(out_w) or not _is_pow2(h):
            raise UnsupportedSizeError(f"irfft2 needs power-of-two extents, got {h}x{out_w}")
        if wh != out_w // 2 + 1:
            raise DimensionError(f"spectrum width {wh} inconsistent with out_w={out_w}")
        c = c2 // 2
        self.c, self.h, self.w = c, h, out_w
        self.cw = _hermitian_weights(out_w)
        z = (x[:, :c] + 1j * x[:, c:]) * self.cw
        return (_half_to_real(z, out_w) / (h * out_w)).astype(x.dtype)

    def backward(self, g):
        f = rfft2_complex(g) * (self.cw / (self.h * self.w))
        return (np.concatenate([f.real, f.imag], axis=1).astype(g.dtype),)


def rfft2(fb: Tensor) -> Tensor:
    """Half-plane spectrum of ``fb`` [N,C,H,W] as [N,2C,H,W//2+1] (real, then imaginary)."""
    if fb.ndim != 4:
        raise DimensionError(f"rfft2 expects NCHW, got {fb.shape}")
    return RFFT2.apply(fb)


def irfft2(x: Tensor, out_w: int) -> Tensor:
    if x.ndim != 4:
        raise DimensionError(f"irfft2 expects [N,2C,H,W//2+1], got {x.shape}")
    return IRFFT2.apply(x, out_w=out_w)


def ffc_block(fb: Tensor, weight: Tensor, bias: Tensor, activation: str = "leaky_relu") -> Tensor:
    """Pointwise convolution in the frequency domain, mapped back to [N,C,H,W].

    ``weight`` is a [2C, 2C, 1, 1] kernel acting on the stacked real/imag
    channels.  ``activation`` is ``"leaky_relu"`` or ``"identity"``.
    """
    c = fb.shape[1]
    if weight.shape != (2 * c, 2 * c, 1, 1):
        raise DimensionError(f"spectral weight must be {(2 * c, 2 * c, 1, 1)}, got {weight.shape}")
    x = conv2d(rfft2(fb), weight, bias)
    if activation == "leaky_relu":
        x = leaky_relu(x, 0.2)
    elif activation != "identity":
        raise ContractError(f"unknown activation {activation!r}")
    return irfft2(x, fb.shape[3])


def ffc_residual_stack(fb: Tensor, weights: Sequence[tuple[Tensor, Tensor]], activation: str = "leaky_relu") -> Tensor:
    """``fb <- fb + ffc_block(fb)`` once per (weight, bias) pair."""
    if len(weights) < 1:
        raise ContractError("ffc_residual_stack needs depth >= 1")
    for w, b in weights:
        fb = fb + ffc_block(fb, w, b, activation)
    return fb
