"""Dataclass configs and the ``section.key = value`` text format.

Every key is typed by its dataclass field; unknown keys and malformed values
are hard errors.  ``schema_lines()`` prints the accepted keys.
"""

from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class NetConfig:
    canvas_h: int = 64
    canvas_w: int = 64
    content_h: int = 32
    style_dim: int = 128
    base_width: int = 16
    style_stride: int = 16
    inpaint_stride: int = 8
    synth_depth: int = 5
    skip_stages: tuple[int, ...] = (1, 2, 3)
    style_blocks: int = 1
    ffc_depth: int = 2
    fusion_blocks: int = 2
    roi_grid: int = 7
    adain_eps: float = 1e-5
    patch_h: int = 32
    patch_w: int = 96
    rec_widths: tuple[int, ...] = (16, 32, 64)
    rec_hidden: int = 128
    rec_frame_stride: int = 4
    feat_widths: tuple[int, ...] = (8, 16, 32, 32)
    feat_seed: int = 1234

    # derived widths, all proportional to base_width
    @property
    def style_widths(self) -> tuple[int, ...]:
        b = self.base_width
        return (b, 2 * b, 4 * b, 8 * b)

    @property
    def content_widths(self) -> tuple[int, ...]:
        b = self.base_width
        return (b, 2 * b, 4 * b, 4 * b, 8 * b)

    @property
    def synth_widths(self) -> tuple[int, ...]:
        b = self.base_width
        return (8 * b, 4 * b, 2 * b, b, b)

    @property
    def disc_widths(self) -> tuple[int, ...]:
        b = self.base_width
        return (b, 2 * b, 4 * b, 4 * b)

    @property
    def inpaint_width(self) -> int:
        return 2 * self.base_width

    @property
    def fusion_width(self) -> int:
        return max(8, self.base_width // 2)

    def validate(self) -> None:
        for name in ("canvas_h", "canvas_w"):
            v = getattr(self, name)
            if v < 16 or v & (v - 1):
                raise ConfigError(f"net.{name} must be a power of two >= 16, got {v}")
        if self.content_h % 32:
            raise ConfigError(f"net.content_h must be divisible by 32, got {self.content_h}")
        if self.synth_depth != 5:
            raise ConfigError("net.synth_depth must equal the content encoder stage count (5)")
        if not set(self.skip_stages) <= set(range(1, self.synth_depth - 1)):
            raise ConfigError(f"net.skip_stages must be a subset of 1..{self.synth_depth - 2}, got {self.skip_stages}")
        if self.style_stride != 16 or self.inpaint_stride != 8:
            raise ConfigError("backbone strides are fixed at 16 (style) and 8 (inpainting)")
        if self.patch_h != 32 or self.patch_w % self.rec_frame_stride:
            raise ConfigError("net.patch_h must be 32 and net.patch_w divisible by the frame stride")
        if min(self.base_width, self.style_dim, self.roi_grid, self.ffc_depth) < 1:
            raise ConfigError("widths, depths and grid sizes must be positive")


@dataclass
class LossWeights:
    alpha: float = 1.0
    beta: float = 10.0
    lambda1: float = 10.0
    lambda2: float = 1.0
    lambda3: float = 0.1

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigError(f"loss.{f.name} must be >= 0")


@dataclass
class Flags:
    skip_connections: bool = True
    local_loss: bool = True
    paired_data: bool = True
    use_recognizer: bool = True


@dataclass
class TrainConfig:
    net: NetConfig = field(default_factory=NetConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    flags: Flags = field(default_factory=Flags)
    lr: float = 1e-4
    batch_size: int = 8
    iterations: int = 3000
    seed: int = 0
    mix_ratio: float = 0.5
    dataset_size: int = 0  # 0: a fresh batch every step
    checkpoint_every: int = 500
    log_every: int = 10
    rec_steps: int = 5000
    rec_lr: float = 1e-3
    rec_batch: int = 16
    rec_target_acc: float = 0.95  # early-stop level, above the 0.9 requirement
    rec_eval_every: int = 250
    rec_eval_size: int = 200

    def validate(self) -> None:
        self.net.validate()
        self.loss.validate()
        if not 0.0 <= self.mix_ratio <= 1.0:
            raise ConfigError(f"mix_ratio must lie in [0, 1], got {self.mix_ratio}")
        if self.lr <= 0 or self.rec_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if min(self.batch_size, self.iterations, self.rec_batch) < 1:
            raise ConfigError("batch sizes and iteration counts must be >= 1")

    def effective_loss(self) -> LossWeights:
        """Loss weights after ablation flags are applied."""
        w = dataclasses.replace(self.loss)
        if not self.flags.local_loss:
            w.alpha = w.beta = w.lambda3 = 0.0
        if not self.flags.use_recognizer:
            w.lambda3 = 0.0
        return w

    def effective_mix_ratio(self) -> float:
        return self.mix_ratio if self.flags.paired_data else 0.0


def paper_scale() -> TrainConfig:
    """The full-scale settings: 256 canvas, content height 64, batch 12, 500k iterations."""
    return TrainConfig(
        net=NetConfig(canvas_h=256, canvas_w=256, content_h=64, style_dim=512, base_width=64, style_blocks=3),
        batch_size=12,
        iterations=500_000,
    )


# -- text format --------------------------------------------------------------
def _sections(cfg: TrainConfig):
    yield "", cfg
    yield "net", cfg.net
    yield "loss", cfg.loss
    yield "flags", cfg.flags


def _field_types(obj) -> dict[str, type]:
    hints = typing.get_type_hints(type(obj))
    return {f.name: hints[f.name] for f in dataclasses.fields(obj) if not dataclasses.is_dataclass(hints[f.name])}


def _parse_value(raw: str, typ, key: str):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typing.get_origin(typ) is tuple:
            return tuple(int(p) for p in raw.split(",") if p.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {_type_name(typ)}") from None
    raise ConfigError(f"{key}: unsupported type {typ}")


def _type_name(typ) -> str:
    if typing.get_origin(typ) is tuple:
        return "int-list"
    return typ.__name__


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    cfg = dataclasses.replace(base) if base is not None else TrainConfig()
    cfg.net = dataclasses.replace(cfg.net)
    cfg.loss = dataclasses.replace(cfg.loss)
    cfg.flags = dataclasses.replace(cfg.flags)
    targets = {}
    for prefix, obj in _sections(cfg):
        for name, typ in _field_types(obj).items():
            targets[f"{prefix}.{name}" if prefix else name] = (obj, name, typ)
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = (p.strip() for p in line.split("=", 1))
        if key not in targets:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        obj, name, typ = targets[key]
        setattr(obj, name, _parse_value(raw, typ, key))
    cfg.validate()
    return cfg


def load_config(path: str | os.PathLike | None) -> TrainConfig:
    cfg = parse_config(Path(path).read_text()) if path else TrainConfig()
    env_seed = os.environ.get("GLASTE_SEED")
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"GLASTE_SEED must be an integer, got {env_seed!r}") from None
    return cfg


def dump_config(cfg: TrainConfig) -> str:
    lines = []
    for prefix, obj in _sections(cfg):
        for name in _field_types(obj):
            key = f"{prefix}.{name}" if prefix else name
            lines.append(f"{key} = {_format_value(getattr(obj, name))}")
    return "\n".join(lines) + "\n"


def schema_lines() -> list[str]:
    cfg = TrainConfig()
    out = []
    for prefix, obj in _sections(cfg):
        for name, typ in _field_types(obj).items():
            key = f"{prefix}.{name}" if prefix else name
            out.append(f"{key} : {_type_name(typ)} = {_format_value(getattr(obj, name))}")
    return out
