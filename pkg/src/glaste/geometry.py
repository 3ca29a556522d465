"""Rotated boxes, normalized-coordinate affine fusion, and bilinear resampling.

Conventions shared by every function here:

* pixel ``(x, y)`` has its center at integer coordinates, x to the right and
  y downwards;
* normalized coordinates are corner-aligned, ``u = 2x/(W-1) - 1``, so
  ``u = +-1`` lands exactly on the outermost pixel centers;
* a box with angle ``theta`` has its width axis along ``(cos t, -sin t)`` and
  its height axis along ``(sin t, cos t)``, i.e. positive angles turn the box
  counter-clockwise as seen on screen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .tensor import ContractError, DimensionError, Function, Tensor


class SingularityError(ContractError):
    pass


class DegenerateBoxError(SingularityError):
    pass


def _wrap_angle(theta: float) -> float:
    t = math.remainder(theta, 2 * math.pi)
    return math.pi if t == -math.pi else t


@dataclass(frozen=True)
class RotatedBox:
    cx: float
    cy: float
    w: float
    h: float
    theta: float = 0.0  # radians

    def __post_init__(self):
        vals = (self.cx, self.cy, self.w, self.h, self.theta)
        if not all(math.isfinite(v) for v in vals):
            raise ContractError(f"non-finite box {vals}")
        if self.w <= 0 or self.h <= 0:
            raise DegenerateBoxError(f"box extents must be positive, got w={self.w}, h={self.h}")
        object.__setattr__(self, "theta", _wrap_angle(float(self.theta)))

    @classmethod
    def from_degrees(cls, cx, cy, w, h, deg) -> "RotatedBox":
        return cls(float(cx), float(cy), float(w), float(h), math.radians(float(deg)))

    @property
    def degrees(self) -> float:
        return math.degrees(self.theta)

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([c, -s]), np.array([s, c])

    def corners(self) -> np.ndarray:
        """Corners (4, 2) in order top-left, top-right, bottom-right, bottom-left of the box frame."""
        ew, eh = self.axes()
        center = np.array([self.cx, self.cy])
        signs = [(-1, -1), (1, -1), (1, 1), (-1, 1)]
        return np.array([center + a * self.w / 2 * ew + b * self.h / 2 * eh for a, b in signs])

    def scaled(self, stride: float) -> "RotatedBox":
        """The same region in the pixel frame of a feature map ``stride`` times coarser."""
        return RotatedBox((self.cx + 0.5) / stride - 0.5, (self.cy + 0.5) / stride - 0.5, self.w / stride, self.h / stride, self.theta)

    def inside(self, width: int, height: int, margin: float = 0.0) -> bool:
        c = self.corners()
        return bool(np.all(c[:, 0] >= margin - 0.5) and np.all(c[:, 0] <= width - 0.5 - margin)
                    and np.all(c[:, 1] >= margin - 0.5) and np.all(c[:, 1] <= height - 0.5 - margin))


@dataclass(frozen=True, eq=False)
class AffineParams:
    """2x3 map from output normalized coordinates to source normalized coordinates."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64)
        if m.shape != (2, 3):
            raise DimensionError(f"affine params must be 2x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise SingularityError("affine params contain non-finite entries")
        if abs(np.linalg.det(m[:, :2])) < 1e-12:
            raise SingularityError("affine params are not invertible")
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> "AffineParams":
        return cls(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    def homogeneous(self) -> np.ndarray:
        return np.vstack([self.m, [0.0, 0.0, 1.0]])

    def apply(self, uv: np.ndarray) -> np.ndarray:
        uv = np.asarray(uv, dtype=np.float64)
        return uv @ self.m[:, :2].T + self.m[:, 2]


def norm_matrix(width: float, height: float) -> np.ndarray:
    """Homogeneous map from pixel coordinates to corner-aligned [-1, 1]^2."""
    if width < 2 or height < 2:
        raise ContractError(f"normalization needs extents >= 2, got {width}x{height}")
    return np.array([[2.0 / (width - 1), 0.0, -1.0], [0.0, 2.0 / (height - 1), -1.0], [0.0, 0.0, 1.0]])


def _translate(tx, ty):
    return np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])


def fit_scale(box: RotatedBox, fg_w: float, fg_h: float) -> float:
    """Largest uniform scale that fits an fg_w x fg_h rectangle inside the box."""
    return min(box.w / fg_w, box.h / fg_h)


def box_to_M(box: RotatedBox, fg_w: float, fg_h: float, center: tuple[float, float] | None = None) -> np.ndarray:
    """Pixel map foreground -> canvas placing the foreground centered in ``box``.

    The foreground is scaled uniformly (aspect ratio kept) by the largest
    factor that still fits: height-limited for short text, width-limited for
    long text.  ``center`` is the foreground pixel that lands on the box
    center; it defaults to the middle of the fg_w x fg_h frame.
    """
    if fg_w < 1 or fg_h < 1:
        raise ContractError(f"foreground extents must be >= 1, got {fg_w}x{fg_h}")
    s = fit_scale(box, fg_w, fg_h)
    if center is None:
        center = ((fg_w - 1) / 2.0, (fg_h - 1) / 2.0)
    c, si = math.cos(box.theta), math.sin(box.theta)
    rot = np.array([[c, si, 0.0], [-si, c, 0.0], [0.0, 0.0, 1.0]])
    scale = np.diag([s, s, 1.0])
    return _translate(box.cx, box.cy) @ rot @ scale @ _translate(-center[0], -center[1])


def theta_from_box(
    box: RotatedBox,
    fg_size: tuple[int, int],
    canvas_size: tuple[int, int],
    valid_size: tuple[float, float] | None = None,
) -> AffineParams:
    """Inverse-warp parameters sampling a foreground image onto the canvas.

    ``fg_size`` and ``canvas_size`` are (width, height).  ``valid_size`` is the
    centered part of the foreground that must fit the box (defaults to the
    whole foreground); padding beyond it may fall outside the box.
    """
    fw, fh = fg_size
    cw, ch = canvas_size
    vw, vh = valid_size if valid_size is not None else (fw, fh)
    t1 = norm_matrix(fw, fh)
    t2 = norm_matrix(cw, ch)
    m = box_to_M(box, vw, vh, center=((fw - 1) / 2.0, (fh - 1) / 2.0))
    forward = t2 @ m @ np.linalg.inv(t1)
    if not np.all(np.isfinite(forward)) or abs(np.linalg.det(forward)) < 1e-12:
        raise SingularityError("box yields a singular affine map")
    return AffineParams(np.linalg.inv(forward)[:2])


# -- bilinear resampling -----------------------------------------------------
def _snap(v: np.ndarray) -> np.ndarray:
    # float round-off near integers would otherwise leak weight onto a neighbor
    r = np.round(v)
    return np.where(np.abs(v - r) < 1e-9, r, v)


def bilinear_matrix(xs: np.ndarray, ys: np.ndarray, height: int, width: int, padding: str, dtype=np.float64) -> sp.csr_matrix:
    """Sparse (P, H*W) operator evaluating bilinear interpolation at P points.

    ``padding="border"`` clamps points into the map; ``"zeros"`` drops
    neighbors outside it.
    """
    xs = _snap(np.asarray(xs, dtype=np.float64).ravel())
    ys = _snap(np.asarray(ys, dtype=np.float64).ravel())
    if padding == "border":
        xs = np.clip(xs, 0, width - 1)
        ys = np.clip(ys, 0, height - 1)
    elif padding != "zeros":
        raise ContractError(f"unknown padding {padding!r}")
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = xs - x0
    fy = ys - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    rows, cols, vals = [], [], []
    p = np.arange(xs.size)
    for dx, dy, wgt in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)), (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
        xi, yi = x0 + dx, y0 + dy
        ok = (xi >= 0) & (xi < width) & (yi >= 0) & (yi < height) & (wgt != 0)
        rows.append(p[ok])
        cols.append(yi[ok] * width + xi[ok])
        vals.append(wgt[ok])
    rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    return sp.csr_matrix((vals.astype(dtype), (rows, cols)), shape=(xs.size, height * width))


class Resample(Function):
    """Apply one sparse resampling operator per sample: [N,C,H,W] -> [N,C,P]."""

    def forward(self, x, mats):
        n, c, h, w = x.shape
        if len(mats) != n:
            raise DimensionError(f"{len(mats)} resampling operators for batch of {n}")
        self.mats, self.shape = mats, x.shape
        flat = x.reshape(n, c, h * w)
        return np.stack([(m @ flat[i].T).T for i, m in enumerate(mats)]).astype(x.dtype)

    def backward(self, g):
        n, c, h, w = self.shape
        gx = np.stack([(m.T @ g[i].T).T for i, m in enumerate(self.mats)])
        return (gx.reshape(self.shape).astype(g.dtype),)


def _per_sample(items, n: int) -> list:
    if isinstance(items, (list, tuple)):
        if len(items) != n:
            raise DimensionError(f"expected {n} per-sample entries, got {len(items)}")
        return list(items)
    return [items] * n


def bilinear_sample(fm: Tensor, pts) -> Tensor:
    """Sample ``fm`` [N,C,H,W] at continuous pixel points, border-clamped.

    ``pts`` is a (P, 2) array of (x, y) shared by the batch, or a list of one
    such array per sample.  Returns [N, C, P].
    """
    n, _, h, w = fm.shape
    pts = _per_sample(pts if isinstance(pts, (list, tuple)) else np.asarray(pts), n)
    mats = [bilinear_matrix(np.asarray(p)[:, 0], np.asarray(p)[:, 1], h, w, "border", fm.dtype) for p in pts]
    return Resample.apply(fm, mats=mats)


def box_grid_points(box: RotatedBox, grid_h: int, grid_w: int) -> np.ndarray:
    """Centers of a grid_h x grid_w uniform grid over the rotated box, row-major (P, 2)."""
    if grid_h < 1 or grid_w < 1:
        raise ContractError(f"grid extents must be >= 1, got {grid_h}x{grid_w}")
    u = ((np.arange(grid_w) + 0.5) / grid_w - 0.5) * box.w
    v = ((np.arange(grid_h) + 0.5) / grid_h - 0.5) * box.h
    uu, vv = np.meshgrid(u, v)
    ew, eh = box.axes()
    pts = np.stack([uu.ravel(), vv.ravel()], axis=1)
    return np.array([box.cx, box.cy]) + pts[:, :1] * ew + pts[:, 1:] * eh


def rotated_roi_align(fm: Tensor, box_scaled, grid_h: int = 7, grid_w: int = 7) -> Tensor:
    """Average of bilinear samples on a rotated grid inside the box: [N,C,H,W] -> [N,C].

    ``box_scaled`` is in the feature map's own pixel frame; one box for the
    batch or a list with one per sample.
    """
    boxes = _per_sample(box_scaled, fm.shape[0])
    pts = [box_grid_points(b, grid_h, grid_w) for b in boxes]
    return bilinear_sample(fm, pts).mean(axis=2)


def rotated_crop(img: Tensor, box, out_h: int, out_w: int) -> Tensor:
    """Resample the rotated box region of ``img`` to an upright [N,C,out_h,out_w] patch."""
    n, c = img.shape[:2]
    boxes = _per_sample(box, n)
    pts = [box_grid_points(b, out_h, out_w) for b in boxes]
    return bilinear_sample(img, pts).reshape(n, c, out_h, out_w)


def grid_sample_matrix(theta: AffineParams, src_h: int, src_w: int, out_h: int, out_w: int, dtype=np.float64) -> sp.csr_matrix:
    xo, yo = np.meshgrid(np.arange(out_w, dtype=np.float64), np.arange(out_h, dtype=np.float64))
    uv = np.stack([norm_axis(xo.ravel(), out_w), norm_axis(yo.ravel(), out_h)], axis=1)
    su = theta.apply(uv)
    xs = (su[:, 0] + 1.0) * (src_w - 1) / 2.0
    ys = (su[:, 1] + 1.0) * (src_h - 1) / 2.0
    return bilinear_matrix(xs, ys, src_h, src_w, "zeros", dtype)


def norm_axis(x: np.ndarray, extent: int) -> np.ndarray:
    return 2.0 * x / (extent - 1) - 1.0


def affine_grid_sample(src: Tensor, theta, out_h: int, out_w: int) -> Tensor:
    """Inverse-warp ``src`` [N,C,Hs,Ws] onto an out_h x out_w grid, zeros outside.

    ``theta`` is one :class:`AffineParams` for the batch or a list per sample.
    """
    n, c, hs, ws = src.shape
    if min(hs, ws, out_h, out_w) < 2:
        raise ContractError("affine_grid_sample needs extents >= 2")
    thetas = _per_sample(theta, n)
    mats = [grid_sample_matrix(t, hs, ws, out_h, out_w, src.dtype) for t in thetas]
    return Resample.apply(src, mats=mats).reshape(n, c, out_h, out_w)


def box_mask(box: RotatedBox, height: int, width: int) -> np.ndarray:
    """Binary [H, W] raster of pixel centers inside the rotated box."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    dx, dy = xx - box.cx, yy - box.cy
    ew, eh = box.axes()
    u = dx * ew[0] + dy * ew[1]
    v = dx * eh[0] + dy * eh[1]
    eps = 1e-9
    return ((np.abs(u) <= box.w / 2 + eps) & (np.abs(v) <= box.h / 2 + eps)).astype(np.float32)


def stack_boxes(boxes: Sequence[RotatedBox]) -> np.ndarray:
    return np.array([[b.cx, b.cy, b.w, b.h, b.theta] for b in boxes])
