"""Procedural paired scene-text samples rendered from the embedded bitmap font.

Images are produced in [0, 1], composited, quantized to 8 bits and returned in
[-1, 1] so that saving to PNG and loading back is lossless.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .font import GLYPH_H, GLYPH_W, GLYPHS
from .geometry import RotatedBox, rotated_crop
from .tensor import ContractError, Tensor
from .text import ALPHABET, encode

MARGIN = 1.0  # font units of empty frame around the glyphs
SUPER = 8  # high-resolution samples per font unit
SUBPIX = (-1 / 3, 0.0, 1 / 3)
LUMA = np.array([0.299, 0.587, 0.114])
N_TEXTURES = 3  # gradient, value noise, checker

LEXICON = tuple("""
able acid aged also area army away baby back ball band bank base bath bear beat bell best bird blow blue boat body bomb
bond bone book boom born boss both bowl bulk burn bush busy cafe cake call calm camp card care case cash cast cell chat
chip city club coal coat code cold come cook cool cope copy core cost crew crop dark data date dawn days dead deal dean
dear debt deep deny desk dial diet disc door dose down draw drew drop drug dual duke dust duty each earn ease east easy
edge else even ever exit face fact fair fall farm fast fate fear feed feel fell file fill film find fine fire firm fish
five flat flow food foot form fort four free from fuel full fund gain game gate gave gear gift girl give glad goal gold
golf gone good gray grew grow gulf hair half hall hand hang hard harm hate have head hear heat held hell help here hero
high hill hire hold hole holy home hope host hour huge hung hunt hurt idea inch into iron item jack jazz join jump jury
at go garden window station market 2024 route66
""".split())
assert len(LEXICON) == 200 and len(set(LEXICON)) == 200


class RenderError(ContractError):
    pass


@dataclass(frozen=True)
class RenderSpec:
    """Style shared by every text layer of one sample."""

    glyph_scale: float  # canvas pixels per font unit before fitting
    color: tuple[float, float, float]  # in [0, 1]
    texture: int
    rotation_deg: float
    spacing: float  # extra font units between glyphs
    seed: int


@dataclass
class SceneSample:
    scene: np.ndarray  # [3, H, W] in [-1, 1]
    box: RotatedBox
    source_text: str
    target_text: str
    content_img: np.ndarray  # [3, H_c, W_c]
    content_valid_w: float
    gt_edited: np.ndarray | None
    spec: RenderSpec
    mode: str
    seed: int

    def gt_patch(self, out_h: int, out_w: int) -> np.ndarray | None:
        """Upright local crop of the edited ground truth under the box."""
        if self.gt_edited is None:
            return None
        return rotated_crop(Tensor(self.gt_edited[None]), self.box, out_h, out_w).data[0]


@dataclass
class DataConfig:
    canvas_h: int = 64
    canvas_w: int = 64
    content_h: int = 32
    scale_range: tuple[float, float] = (1.1, 2.0)  # at a 64 px canvas
    min_scale: float = 0.85
    max_rotation: float = 12.0  # degrees
    max_spacing: float = 0.4
    lexicon_prob: float = 0.5
    max_len: int = 10
    retries: int = 20


# -- text rasterization ----------------------------------------------------------
def frame_size(text: str, spacing: float) -> tuple[float, float]:
    """Width and height of the text frame in font units."""
    n = len(text)
    if n == 0:
        raise RenderError("cannot render empty text")
    return 2 * MARGIN + n * GLYPH_W + (n - 1) * (1 + spacing), 2 * MARGIN + GLYPH_H


@functools.lru_cache(maxsize=512)
def _frame_mask(text: str, spacing: float) -> np.ndarray:
    """Smoothed glyph coverage of the frame sampled SUPER times per unit."""
    encode(text)  # validates the alphabet
    fw, fh = frame_size(text, spacing)
    mask = np.zeros((int(round(fh * SUPER)), int(math.ceil(fw * SUPER))), dtype=np.float64)
    for k, ch in enumerate(text):
        x0 = MARGIN + k * (GLYPH_W + 1 + spacing)
        rows, cols = np.nonzero(GLYPHS[ch])
        for r, c in zip(rows, cols):
            y_lo = int(round((MARGIN + r) * SUPER))
            x_lo = int(round((x0 + c) * SUPER))
            mask[y_lo:y_lo + SUPER, x_lo:x_lo + SUPER] = 1.0
    return ndimage.uniform_filter(mask, size=SUPER // 2 + 1, mode="constant")


def _coverage_at(text: str, spacing: float, qx: np.ndarray, qy: np.ndarray) -> np.ndarray:
    """Coverage at continuous font-unit coordinates, zero outside the frame."""
    mask = _frame_mask(text, spacing)
    coords = np.stack([qy * SUPER - 0.5, qx * SUPER - 0.5])
    return ndimage.map_coordinates(mask, coords, order=1, mode="constant", cval=0.0)


def _supersampled(height: int, width: int, to_units) -> tuple[np.ndarray, ...]:
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    for oy in SUBPIX:
        for ox in SUBPIX:
            yield to_units(xx + ox, yy + oy)


def box_layer(text: str, spacing: float, box: RotatedBox, height: int, width: int) -> np.ndarray:
    """Anti-aliased coverage [H, W] of ``text`` fitted into ``box`` keeping its aspect."""
    fw, fh = frame_size(text, spacing)
    s = min(box.w / fw, box.h / fh)
    ew, eh = box.axes()

    def to_units(x, y):
        dx, dy = x - box.cx, y - box.cy
        return fw / 2 + (dx * ew[0] + dy * ew[1]) / s, fh / 2 + (dx * eh[0] + dy * eh[1]) / s

    acc = sum(_coverage_at(text, spacing, qx, qy) for qx, qy in _supersampled(height, width, to_units))
    return np.clip(acc / len(SUBPIX) ** 2, 0.0, 1.0)


def _stretched_layer(text: str, spacing: float, height: int, width: int, fill: float) -> np.ndarray:
    """Coverage with the frame stretched over ``fill`` of a height x width image."""
    fw, fh = frame_size(text, spacing)
    sx, sy = width * fill / fw, height * fill / fh

    def to_units(x, y):
        return fw / 2 + (x - (width - 1) / 2) / sx, fh / 2 + (y - (height - 1) / 2) / sy

    acc = sum(_coverage_at(text, spacing, qx, qy) for qx, qy in _supersampled(height, width, to_units))
    return np.clip(acc / len(SUBPIX) ** 2, 0.0, 1.0)


def content_width(text: str, content_h: int) -> tuple[int, float]:
    """Padded width (a multiple of 32) and the text's own width at height content_h."""
    fw, fh = frame_size(text, 0.0)
    valid = fw * content_h / fh
    return int(math.ceil(valid / 32.0 - 1e-9)) * 32, valid


def render_content(text: str, content_h: int = 32) -> tuple[np.ndarray, float]:
    """Black-on-white content image [3, H_c, W_c] and its valid width."""
    fw, fh = frame_size(text, 0.0)
    width, valid = content_width(text, content_h)
    u = content_h / fh
    x0 = (width - valid) / 2

    def to_units(x, y):
        return (x + 0.5 - x0) / u, (y + 0.5) / u

    acc = sum(_coverage_at(text, 0.0, qx, qy) for qx, qy in _supersampled(content_h, width, to_units))
    cov = np.clip(acc / len(SUBPIX) ** 2, 0.0, 1.0)
    img = quantize(np.repeat((1.0 - cov)[None], 3, axis=0))
    return img, valid


# -- backgrounds -----------------------------------------------------------------
def _value_noise(rng, height, width, cells):
    grid = rng.random((cells + 1, cells + 1))
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    coords = np.stack([yy / max(height - 1, 1) * cells, xx / max(width - 1, 1) * cells])
    return ndimage.map_coordinates(grid, coords, order=3, mode="nearest")


def background(texture: int, rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Procedural texture [3, H, W] in [0, 1]."""
    c0, c1 = rng.random(3), rng.random(3)
    if texture == 0:
        phi = rng.uniform(0, 2 * math.pi)
        yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
        t = xx * math.cos(phi) + yy * math.sin(phi)
        t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
        img = c0[:, None, None] * (1 - t) + c1[:, None, None] * t
    elif texture == 1:
        n = _value_noise(rng, height, width, 4) + 0.5 * _value_noise(rng, height, width, 8)
        t = np.clip(n / 1.5, 0.0, 1.0)
        img = c0[:, None, None] * (1 - t) + c1[:, None, None] * t
    elif texture == 2:
        cell = rng.uniform(4, 12) * height / 64
        oy, ox = rng.uniform(0, cell, size=2)
        yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
        t = ((np.floor((xx + ox) / cell) + np.floor((yy + oy) / cell)) % 2).astype(np.float64)
        c1 = np.clip(c0 + rng.uniform(-0.3, 0.3, size=3), 0, 1)  # keep checker contrast moderate
        img = c0[:, None, None] * (1 - t) + c1[:, None, None] * t
    else:
        raise RenderError(f"unknown texture id {texture}")
    return np.clip(img, 0.0, 1.0)


def _text_color(rng: np.random.Generator, bg_luma: float) -> np.ndarray:
    for _ in range(50):
        c = rng.random(3)
        if abs(float(c @ LUMA) - bg_luma) >= 0.35:
            return c
    return np.zeros(3) if bg_luma > 0.5 else np.ones(3)


def quantize(img01: np.ndarray) -> np.ndarray:
    return to_float(to_uint8(img01 * 2.0 - 1.0))


def to_uint8(img: np.ndarray) -> np.ndarray:
    """[-1, 1] float image -> uint8 of the same shape."""
    return np.clip(np.round((np.asarray(img, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def to_float(u8: np.ndarray) -> np.ndarray:
    return u8.astype(np.float32) / np.float32(127.5) - np.float32(1.0)


# -- sampling ---------------------------------------------------------------------
def random_text(rng: np.random.Generator, cfg: DataConfig) -> str:
    if rng.random() < cfg.lexicon_prob:
        return LEXICON[rng.integers(len(LEXICON))]
    n = int(rng.integers(1, cfg.max_len + 1))
    return "".join(ALPHABET[i] for i in rng.integers(len(ALPHABET), size=n))


def _place_box(rng, text: str, spacing: float, deg: float, cfg: DataConfig) -> RotatedBox | None:
    fw, fh = frame_size(text, spacing)
    ref = cfg.canvas_h / 64.0
    c, s = abs(math.cos(math.radians(deg))), abs(math.sin(math.radians(deg)))
    room_w, room_h = cfg.canvas_w - 1 - 2 * 1.0, cfg.canvas_h - 1 - 2 * 1.0
    u_max = min(room_w / (fw * c + fh * s), room_h / (fw * s + fh * c))
    u = min(rng.uniform(*cfg.scale_range) * ref, u_max * 0.999)
    if u < cfg.min_scale * ref:
        return None
    w, h = fw * u, fh * u
    ex, ey = (w * c + h * s) / 2, (w * s + h * c) / 2
    lo_x, hi_x = 0.5 + ex, cfg.canvas_w - 1.5 - ex
    lo_y, hi_y = 0.5 + ey, cfg.canvas_h - 1.5 - ey
    cx = float(np.round(rng.uniform(lo_x, hi_x) * 8) / 8)
    cy = float(np.round(rng.uniform(lo_y, hi_y) * 8) / 8)
    box = RotatedBox.from_degrees(cx, cy, w, h, deg)
    return box if box.inside(cfg.canvas_w, cfg.canvas_h, margin=1.0) else None


def draw_spec(rng: np.random.Generator, seed: int, cfg: DataConfig) -> tuple[RenderSpec, str, RotatedBox]:
    """Draw style, source text and a box that fits it; retries with new text."""
    for _ in range(cfg.retries):
        text = random_text(rng, cfg)
        deg = float(np.round(rng.uniform(-cfg.max_rotation, cfg.max_rotation) * 2) / 2)
        spacing = float(np.round(rng.uniform(0, cfg.max_spacing) * 20) / 20)
        texture = int(rng.integers(N_TEXTURES))
        box = _place_box(rng, text, spacing, deg, cfg)
        if box is not None:
            fw, _ = frame_size(text, spacing)
            spec = RenderSpec(box.w / fw, (0.0, 0.0, 0.0), texture, deg, spacing, seed)
            return spec, text, box
    raise RenderError(f"seed {seed}: no text fit the canvas after {cfg.retries} retries")


def compose(bg01: np.ndarray, color, alpha: np.ndarray) -> np.ndarray:
    col = np.asarray(color, dtype=np.float64)[:, None, None]
    return quantize(bg01 * (1 - alpha) + col * alpha)


def render_sample(seed: int, mode: str = "paired", cfg: DataConfig | None = None, target_text: str | None = None) -> SceneSample:
    """One sample as a pure function of (seed, mode, cfg).

    ``paired`` draws a second word rendered with the same style into the edited
    ground truth; ``real`` reuses the source word and the scene as ground truth.
    """
    cfg = cfg or DataConfig()
    if mode not in ("real", "paired"):
        raise ContractError(f"unknown sample mode {mode!r}")
    rng = np.random.default_rng([seed, 0x5EED])
    spec, source, box = draw_spec(rng, seed, cfg)
    bg = background(spec.texture, rng, cfg.canvas_h, cfg.canvas_w)
    region = box_layer(source, spec.spacing, box, cfg.canvas_h, cfg.canvas_w) > 0
    bg_luma = float((LUMA[:, None, None] * bg).sum(0)[region].mean())
    color = tuple(float(v) for v in _text_color(rng, bg_luma))
    other = random_text(rng, cfg)
    spec = RenderSpec(spec.glyph_scale, color, spec.texture, spec.rotation_deg, spec.spacing, seed)
    scene = compose(bg, color, box_layer(source, spec.spacing, box, cfg.canvas_h, cfg.canvas_w))
    if mode == "real":
        target = source
        gt = scene
    else:
        target = target_text if target_text is not None else other
        gt = compose(bg, color, box_layer(target, spec.spacing, box, cfg.canvas_h, cfg.canvas_w))
    content, valid = render_content(target, cfg.content_h)
    return SceneSample(scene, box, source, target, content, valid, gt, spec, mode, seed)


def is_paired_slot(i: int, mix_ratio: float) -> bool:
    return math.floor((i + 1) * mix_ratio + 1e-9) > math.floor(i * mix_ratio + 1e-9)


def make_batch(seeds: Sequence[int], mix_ratio: float = 0.5, cfg: DataConfig | None = None) -> list[SceneSample]:
    """Deterministic interleave: slot i is paired when floor((i+1)r) > floor(ir)."""
    if not 0.0 <= mix_ratio <= 1.0:
        raise ContractError(f"mix_ratio must lie in [0, 1], got {mix_ratio}")
    return [render_sample(s, "paired" if is_paired_slot(i, mix_ratio) else "real", cfg) for i, s in enumerate(seeds)]


def mask_box(scene: np.ndarray, box: RotatedBox) -> np.ndarray:
    """Scene with the box region set to 0 plus a mask channel: [3,H,W] -> [4,H,W]."""
    from .geometry import box_mask

    m = box_mask(box, scene.shape[-2], scene.shape[-1])
    return np.concatenate([scene * (1 - m), m[None]], axis=0).astype(scene.dtype)


# -- recognizer crops ---------------------------------------------------------------
def render_crop(seed: int, out_h: int = 32, out_w: int = 96, cfg: DataConfig | None = None) -> tuple[np.ndarray, str]:
    """Upright text crop [3, out_h, out_w] like a local patch of a real-mode sample."""
    cfg = cfg or DataConfig()
    rng = np.random.default_rng([seed, 0xC20F])
    text = random_text(rng, cfg)
    spacing = float(np.round(rng.uniform(0, cfg.max_spacing) * 20) / 20)
    texture = int(rng.integers(N_TEXTURES))
    # the box a canvas of this config would give the text, resampled up to the crop
    fw, fh = frame_size(text, spacing)
    ref = cfg.canvas_h / 64.0
    u = min(rng.uniform(*cfg.scale_range) * ref, (cfg.canvas_w - 3) / fw)
    low_h, low_w = max(8, int(round(fh * u))), max(8, int(round(fw * u)))
    bg = background(texture, rng, low_h, low_w)
    alpha = _stretched_layer(text, spacing, low_h, low_w, fill=rng.uniform(0.9, 1.0))
    bg_luma = float((LUMA[:, None, None] * bg).sum(0)[alpha > 0.5].mean()) if (alpha > 0.5).any() else 0.5
    img = bg * (1 - alpha) + _text_color(rng, bg_luma)[:, None, None] * alpha
    zoom = (1, out_h / low_h, out_w / low_w)
    up = ndimage.zoom(img, zoom, order=1, mode="nearest", grid_mode=True)
    return quantize(np.clip(up, 0, 1)), text


# -- batching -----------------------------------------------------------------------
@dataclass
class Batch:
    scene: np.ndarray  # [N,3,H,W]
    gt: np.ndarray  # [N,3,H,W]
    content: np.ndarray  # [N,3,H_c,W_max]
    valid_w: list[float]
    boxes: list[RotatedBox]
    targets: list[str]
    paired: list[bool]


def pad_content(images: Sequence[np.ndarray]) -> np.ndarray:
    """Symmetric white padding to the widest content image."""
    width = max(im.shape[-1] for im in images)
    out = []
    for im in images:
        extra = width - im.shape[-1]
        left = extra // 2
        out.append(np.pad(im, ((0, 0), (0, 0), (left, extra - left)), constant_values=1.0))
    return np.stack(out).astype(np.float32)


def collate(samples: Sequence[SceneSample]) -> Batch:
    return Batch(
        scene=np.stack([s.scene for s in samples]).astype(np.float32),
        gt=np.stack([s.gt_edited for s in samples]).astype(np.float32),
        content=pad_content([s.content_img for s in samples]),
        valid_w=[s.content_valid_w for s in samples],
        boxes=[s.box for s in samples],
        targets=[s.target_text for s in samples],
        paired=[s.mode == "paired" for s in samples],
    )


# -- dump / load ---------------------------------------------------------------------
def _record(i: int, s: SceneSample) -> dict:
    b = s.box
    return {
        "id": i,
        "seed": s.seed,
        "mode": s.mode,
        "box": [b.cx, b.cy, b.w, b.h, s.spec.rotation_deg],
        "source": s.source_text,
        "target": s.target_text,
        "content_valid_w": s.content_valid_w,
        "spec": asdict(s.spec),
    }


def dump_split(samples: Sequence[SceneSample], directory) -> Path:
    """Write images as PNG plus a JSON-lines manifest."""
    from .imageio import save_image

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, s in enumerate(samples):
        save_image(d / f"{i:05d}_scene.png", s.scene)
        save_image(d / f"{i:05d}_content.png", s.content_img)
        if s.mode == "paired":
            save_image(d / f"{i:05d}_gt.png", s.gt_edited)
        lines.append(json.dumps(_record(i, s), sort_keys=True))
    (d / "manifest.jsonl").write_text("\n".join(lines) + "\n")
    return d


def load_split(directory) -> list[SceneSample]:
    from .imageio import load_image

    d = Path(directory)
    out = []
    for line in (d / "manifest.jsonl").read_text().splitlines():
        if not line.strip():
            continue
        r = json.loads(line)
        i = r["id"]
        cx, cy, w, h, deg = r["box"]
        box = RotatedBox.from_degrees(cx, cy, w, h, deg)
        spec_d = dict(r["spec"])
        spec_d["color"] = tuple(spec_d["color"])
        scene = load_image(d / f"{i:05d}_scene.png")
        gt = load_image(d / f"{i:05d}_gt.png") if r["mode"] == "paired" else scene
        out.append(SceneSample(scene, box, r["source"], r["target"], load_image(d / f"{i:05d}_content.png"),
                               r["content_valid_w"], gt, RenderSpec(**spec_d), r["mode"], r["seed"]))
    return out
