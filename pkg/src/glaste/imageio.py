"""8-bit RGB image files: PNG through Pillow, binary PPM without it."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import to_float, to_uint8

try:
    from PIL import Image
except ImportError:  # pragma: no cover - exercised only without Pillow
    Image = None


def _write_ppm(path: Path, hwc: np.ndarray) -> None:
    h, w, _ = hwc.shape
    path.write_bytes(f"P6\n{w} {h}\n255\n".encode() + hwc.tobytes())


def _read_ppm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise ValueError(f"{path}: only 8-bit binary PPM is supported")
    w, h = int(tokens[1]), int(tokens[2])
    data = np.frombuffer(raw[pos + 1:pos + 1 + w * h * 3], dtype=np.uint8)
    if data.size != w * h * 3:
        raise ValueError(f"{path}: truncated PPM data")
    return data.reshape(h, w, 3)


def save_image(path, img: np.ndarray) -> Path:
    """Save a [3,H,W] image in [-1, 1]; falls back to .ppm when Pillow is absent."""
    path = Path(path)
    hwc = np.ascontiguousarray(to_uint8(img).transpose(1, 2, 0))
    if Image is None or path.suffix.lower() == ".ppm":
        path = path.with_suffix(".ppm")
        _write_ppm(path, hwc)
    else:
        Image.fromarray(hwc, mode="RGB").save(path)
    return path


def load_image(path) -> np.ndarray:
    """Read an RGB image as [3,H,W] float32 in [-1, 1]."""
    path = Path(path)
    if not path.exists() and path.with_suffix(".ppm").exists():
        path = path.with_suffix(".ppm")
    if path.suffix.lower() == ".ppm":
        hwc = _read_ppm(path)
    else:
        if Image is None:
            raise RuntimeError(f"reading {path.suffix} files needs Pillow")
        with Image.open(path) as im:
            hwc = np.asarray(im.convert("RGB"))
    return to_float(hwc.transpose(2, 0, 1).copy())
