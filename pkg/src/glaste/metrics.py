"""Image quality and recognition metrics.

Image metrics take arrays in [0, 1] shaped [3,H,W], [N,3,H,W] or [H,W].
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy import ndimage

from .tensor import ContractError, DimensionError

LUMA = np.array([0.299, 0.587, 0.114])
PSNR_CAP = 100.0
SSIM_WIN = 7
K1, K2 = 0.01, 0.03


def to_unit(img) -> np.ndarray:
    """[-1, 1] -> [0, 1]."""
    return (np.asarray(img, dtype=np.float64) + 1.0) / 2.0


def _check(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _check(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    m = mse(a, b)
    if m < 1e-10:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / m)))


def gray(img: np.ndarray) -> np.ndarray:
    """Luma of [..., 3, H, W]; 2-D input passes through."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.shape[-3] != 3:
        raise DimensionError(f"expected 3 channels, got shape {img.shape}")
    return np.tensordot(LUMA, np.moveaxis(img, -3, 0), axes=1)


def _ssim_gray(x: np.ndarray, y: np.ndarray, data_range: float) -> float:
    if min(x.shape) < SSIM_WIN:
        raise ContractError(f"image {x.shape} is smaller than the {SSIM_WIN}x{SSIM_WIN} window")
    c1, c2 = (K1 * data_range) ** 2, (K2 * data_range) ** 2
    filt = lambda v: ndimage.uniform_filter(v, size=SSIM_WIN, mode="constant")
    # keep only windows fully inside the image
    r = SSIM_WIN // 2
    crop = (slice(r, x.shape[0] - r), slice(r, x.shape[1] - r))
    mx, my = filt(x)[crop], filt(y)[crop]
    sxx = filt(x * x)[crop] - mx * mx
    syy = filt(y * y)[crop] - my * my
    sxy = filt(x * y)[crop] - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean SSIM over all 7x7 windows of the luma images, averaged over a batch."""
    a, b = _check(a, b)
    ga, gb = gray(a), gray(b)
    if ga.ndim == 2:
        return _ssim_gray(ga, gb, data_range)
    return float(np.mean([_ssim_gray(x, y, data_range) for x, y in zip(ga, gb)]))


def levenshtein(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def accuracy_and_cer(pred: Sequence[str], gt: Sequence[str]) -> tuple[float, float]:
    if len(pred) != len(gt):
        raise DimensionError(f"{len(pred)} predictions for {len(gt)} ground truths")
    total = sum(len(g) for g in gt)
    if total == 0:
        raise ContractError("ground-truth corpus is empty")
    acc = sum(p == g for p, g in zip(pred, gt)) / len(gt)
    cer = sum(levenshtein(p, g) for p, g in zip(pred, gt)) / total
    return float(acc), float(cer)
