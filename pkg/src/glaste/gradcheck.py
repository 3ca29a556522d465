"""64-bit central finite-difference checks for every differentiable op.

Each registered check builds float64 inputs from a seed and returns a scalar
function of them.  Analytic gradients come from one backward pass; a sample
of coordinates per input is compared against central differences.
"""

from __future__ import annotations

import fnmatch
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import functional as F
from .config import NetConfig
from .geometry import RotatedBox, affine_grid_sample, bilinear_sample, rotated_crop, rotated_roi_align, theta_from_box
from .losses import ctc_loss, d_loss, g_adv_loss, l1_joint, perceptual_joint
from .networks import FeatureNet, adain
from .spectral import ffc_block, irfft2, rfft2
from .tensor import Tensor, concat

EPS = 1e-6
TOL = 1e-4
ABS_FLOOR = 1e-6  # gradients below this are compared absolutely
DEFAULT_SEEDS = 10
COORDS_PER_INPUT = 12


@dataclass
class Case:
    inputs: list[Tensor]
    fn: Callable[..., Tensor]
    eps: float = EPS


def t64(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True, dtype=np.float64)


def _projected(out: Tensor, rng) -> Callable[[Tensor], Tensor]:
    # fixed random weights turn any output into a scalar with O(1) gradients
    r = Tensor(rng.normal(size=out.shape), dtype=np.float64)
    return lambda y: (y * r).sum()


def _wrap(rng, inputs, fn) -> Case:
    proj = _projected(fn(*inputs), rng)
    return Case(inputs, lambda *xs: proj(fn(*xs)))


# -- registry -------------------------------------------------------------------
REGISTRY: dict[str, Callable[[int], Case]] = {}


def register(name: str):
    def deco(builder):
        REGISTRY[name] = builder
        return builder

    return deco


@register("tensor.elementwise")
def _elementwise(seed):
    rng = np.random.default_rng(seed)
    a, b = t64(rng, 3, 4), Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True, dtype=np.float64)

    def fn(a, b):
        return (a * b + a / b - b.sqrt() + (a * 0.3).exp() + b.log() + a.tanh() + a.sigmoid() + b ** 1.5 - a.abs() * 0.1)

    return _wrap(rng, [a, b], fn)


@register("tensor.reduce_reshape")
def _reduce(seed):
    rng = np.random.default_rng(seed)
    a = t64(rng, 2, 3, 4)
    w = t64(rng, 4, 5)
    return _wrap(rng, [a, w], lambda a, w: concat([(a.reshape(6, 4) @ w), a.transpose(1, 0, 2)[:, 1].mean(axis=1, keepdims=True).sum(axis=0, keepdims=True).reshape(1, 1) * Tensor(np.ones((1, 5)))], axis=0)[1:, ::2])


@register("conv2d")
def _conv(seed):
    rng = np.random.default_rng(seed)
    kind = seed % 3
    k, stride, pad = [(3, 1, 1), (4, 2, 1), ((1, 3), 1, (0, 1))][kind]
    kh, kw = (k, k) if isinstance(k, int) else k
    x, w, b = t64(rng, 2, 3, 8, 6), t64(rng, 4, 3, kh, kw), t64(rng, 4)
    return _wrap(rng, [x, w, b], lambda x, w, b: F.conv2d(x, w, b, stride=stride, pad=pad))


@register("linear")
def _linear(seed):
    rng = np.random.default_rng(seed)
    x, w, b = t64(rng, 5, 7), t64(rng, 3, 7), t64(rng, 3)
    return _wrap(rng, [x, w, b], F.linear)


@register("upsample_avgpool")
def _resize(seed):
    rng = np.random.default_rng(seed)
    x = t64(rng, 2, 3, 4, 6)
    return _wrap(rng, [x], lambda x: F.avgpool2d(F.upsample_nearest(x, 2) * F.upsample_nearest(x, 2), 2))


@register("log_softmax")
def _lsm(seed):
    rng = np.random.default_rng(seed)
    x = t64(rng, 4, 3, 6, scale=2.0)
    return _wrap(rng, [x], lambda x: F.log_softmax(x, axis=2))


@register("adain")
def _adain(seed):
    rng = np.random.default_rng(seed)
    fc, zs, zb = t64(rng, 2, 3, 5, 4), t64(rng, 2, 3), t64(rng, 2, 3)
    return _wrap(rng, [fc, zs, zb], lambda fc, zs, zb: adain(fc, zs, zb, 1e-5))


@register("spectral.rfft2_irfft2")
def _fft(seed):
    rng = np.random.default_rng(seed)
    x = t64(rng, 2, 3, 4, 8)
    return _wrap(rng, [x], lambda x: irfft2(rfft2(x) * rfft2(x), 8))


@register("spectral.ffc_block")
def _ffc(seed):
    rng = np.random.default_rng(seed)
    c = 3
    x, w, b = t64(rng, 2, c, 8, 8), t64(rng, 2 * c, 2 * c, 1, 1, scale=0.5), t64(rng, 2 * c, scale=0.1)
    act = "leaky_relu" if seed % 2 == 0 else "identity"
    return _wrap(rng, [x, w, b], lambda x, w, b: ffc_block(x, w, b, activation=act))


def _random_box(rng, h, w) -> RotatedBox:
    return RotatedBox(rng.uniform(2, w - 3), rng.uniform(2, h - 3), rng.uniform(2.0, w / 2), rng.uniform(1.5, h / 2), rng.uniform(-0.5, 0.5))


@register("sampling.bilinear")
def _bilinear(seed):
    rng = np.random.default_rng(seed)
    fm = t64(rng, 2, 3, 7, 9)
    pts = [np.stack([rng.uniform(-1, 9, 15), rng.uniform(-1, 7, 15)], axis=1) for _ in range(2)]
    return _wrap(rng, [fm], lambda fm: bilinear_sample(fm, pts))


@register("sampling.rotated_roi_align")
def _roi(seed):
    rng = np.random.default_rng(seed)
    fm = t64(rng, 2, 4, 8, 10)
    boxes = [_random_box(rng, 8, 10) for _ in range(2)]
    return _wrap(rng, [fm], lambda fm: concat([rotated_roi_align(fm, boxes, 3, 4), rotated_crop(fm, boxes, 3, 5).reshape(2, -1)], axis=1))


@register("sampling.affine_grid")
def _affine(seed):
    rng = np.random.default_rng(seed)
    src = t64(rng, 2, 3, 6, 10)
    boxes = [_random_box(rng, 12, 12) for _ in range(2)]
    thetas = [theta_from_box(b, (10, 6), (12, 12)) for b in boxes]
    return _wrap(rng, [src], lambda src: affine_grid_sample(src, thetas, 12, 12))


@register("loss.d_loss")
def _dloss(seed):
    rng = np.random.default_rng(seed)
    xs = [t64(rng, 2, 1, 3, 3) for _ in range(4)]
    return Case(xs, lambda a, b, c, d: d_loss(a, b, c, d, 1.0))


@register("loss.g_adv")
def _gadv(seed):
    rng = np.random.default_rng(seed)
    xs = [t64(rng, 2, 1, 3, 3) for _ in range(2)]
    return Case(xs, lambda a, b: g_adv_loss(a, b, 1.0))


@register("loss.l1")
def _l1(seed):
    rng = np.random.default_rng(seed)
    xs = [t64(rng, 2, 3, 4, 4), t64(rng, 2, 3, 4, 4), t64(rng, 2, 3, 2, 3), t64(rng, 2, 3, 2, 3)]
    return Case(xs, lambda a, b, c, d: l1_joint(a, b, c, d, 10.0))


_FEAT = {}


def _feat_net():
    if "net" not in _FEAT:
        _FEAT["net"] = FeatureNet(NetConfig(feat_widths=(4, 4, 4, 4))).cast(np.float64)
    return _FEAT["net"]


@register("loss.perceptual")
def _per(seed):
    rng = np.random.default_rng(seed)
    xs = [t64(rng, 1, 3, 16, 16), t64(rng, 1, 3, 16, 16), t64(rng, 1, 3, 16, 32), t64(rng, 1, 3, 16, 32)]
    net = _feat_net()
    # real images enter without gradient, so only the fake ones are checked.
    # Per-pixel gradients are ~1e-5 against an O(10) loss, so a larger step
    # keeps round-off below the tolerance.
    return Case([xs[0], xs[2]], lambda a, c: perceptual_joint(a, xs[1], c, xs[3], 10.0, net), eps=1e-5)


@register("loss.ctc")
def _ctc(seed):
    rng = np.random.default_rng(seed)
    t_len, n, k = 8, 2, 5
    x = t64(rng, t_len, n, k)
    labels = [list(rng.integers(0, k - 1, size=rng.integers(1, 4))) for _ in range(n)]
    return Case([x], lambda x: ctc_loss(F.log_softmax(x, axis=2), labels, blank=k - 1))


# -- driver ---------------------------------------------------------------------
@dataclass
class CheckResult:
    name: str
    seeds: int
    max_rel_err: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < TOL


def rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), ABS_FLOOR)


def check_case(case: Case, rng: np.random.Generator, coords: int = COORDS_PER_INPUT, eps: float | None = None) -> float:
    eps = case.eps if eps is None else eps
    for x in case.inputs:
        x.grad = None
    out = case.fn(*case.inputs)
    out.backward()
    worst = 0.0
    for x in case.inputs:
        analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
        flat = x.data.reshape(-1)
        picks = rng.choice(flat.size, size=min(coords, flat.size), replace=False)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + eps
            fp = case.fn(*case.inputs).item()
            flat[i] = orig - eps
            fm = case.fn(*case.inputs).item()
            flat[i] = orig
            numeric = (fp - fm) / (2 * eps)
            worst = max(worst, rel_err(float(analytic.reshape(-1)[i]), numeric))
    return worst


def matching(pattern: str = "") -> list[str]:
    if not pattern:
        return list(REGISTRY)
    if any(ch in pattern for ch in "*?["):
        return [n for n in REGISTRY if fnmatch.fnmatch(n, pattern)]
    return [n for n in REGISTRY if pattern in n]


def run(pattern: str = "", seeds: int = DEFAULT_SEEDS) -> list[CheckResult]:
    names = matching(pattern)
    if not names:
        raise KeyError(f"no gradient checks match {pattern!r}")
    results = []
    for name in names:
        worst = 0.0
        for seed in range(seeds):
            case = REGISTRY[name](seed)
            err = check_case(case, np.random.default_rng([seed, 7]))
            worst = max(worst, err if math.isfinite(err) else math.inf)
        results.append(CheckResult(name, seeds, worst))
    return results
