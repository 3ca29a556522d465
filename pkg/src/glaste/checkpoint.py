"""Binary checkpoints: weights, Adam moments, metadata and the step counter.

Layout, all little-endian::

    b"GLSTE001"  u32 entry count
    per entry:   u32 name length, name (utf-8), u32 rank, u64 extents..., float32 data
    u64 step

Metadata is stored as ordinary float32 entries under ``meta.*`` (the config
text as one float per byte, the ablation flags as 0/1).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .config import ConfigError, Flags, dump_config, parse_config
from .pipeline import GROUPS, GlasteModel, Trainer

MAGIC = b"GLSTE001"
FLAG_NAMES = ("skip_connections", "local_loss", "paired_data", "use_recognizer")


class CheckpointError(ValueError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class NameMismatchError(CheckpointError):
    pass


def _encode_text(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float32)


def _decode_text(arr: np.ndarray) -> str:
    return arr.astype(np.uint8).tobytes().decode("utf-8")


def model_entries(model: GlasteModel) -> dict[str, np.ndarray]:
    return {name: p.data for name, p in model.named_parameters()}


def collect_entries(model: GlasteModel, trainer: Trainer | None = None) -> dict[str, np.ndarray]:
    entries = dict(model_entries(model))
    if trainer is not None:
        for tag, opt in (("g", trainer.opt_g), ("d", trainer.opt_d)):
            for name, _ in opt.params:
                entries[f"adam.{tag}.m.{name}"] = opt.m[name]
                entries[f"adam.{tag}.v.{name}"] = opt.v[name]
            entries[f"adam.{tag}.t"] = np.array([opt.t], dtype=np.float32)
    cfg = model.cfg
    entries["meta.config"] = _encode_text(dump_config(cfg))
    entries["meta.flags"] = np.array([getattr(cfg.flags, f) for f in FLAG_NAMES], dtype=np.float32)
    entries["meta.recognizer_frozen"] = np.array([model.recognizer_frozen], dtype=np.float32)
    return entries


def write_entries(path, entries: dict[str, np.ndarray], step: int) -> Path:
    path = Path(path)
    chunks = [MAGIC, struct.pack("<I", len(entries))]
    for name, arr in entries.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        chunks.append(struct.pack("<I", len(raw)) + raw + struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    chunks.append(struct.pack("<Q", step))
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)
    return path


def read_entries(path) -> tuple[dict[str, np.ndarray], int]:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        if buf[:5] == MAGIC[:5]:
            raise VersionError(f"{path}: unsupported checkpoint version {buf[5:8]!r}, expected {MAGIC[5:]!r}")
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    pos = 8

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise TruncatedError(f"{path}: truncated while reading {what} at byte {pos}")
        out = buf[pos:pos + n]
        pos += n
        return out

    (count,) = struct.unpack("<I", take(4, "entry count"))
    entries = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4, "name length"))
        name = take(nlen, "name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, f"rank of {name}"))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank, f"extents of {name}"))
        size = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(take(4 * size, f"data of {name}"), dtype="<f4").astype(np.float32).reshape(shape)
        entries[name] = data
    (step,) = struct.unpack("<Q", take(8, "step counter"))
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes after the step counter")
    return entries, step


def save_checkpoint(path, model: GlasteModel, trainer: Trainer | None = None) -> Path:
    step = trainer.step if trainer is not None else 0
    return write_entries(path, collect_entries(model, trainer), step)


def _missing_groups(names: set[str]) -> list[str]:
    return sorted({n.split(".", 1)[0] for n in names})


def config_of(entries: dict[str, np.ndarray]):
    if "meta.config" not in entries:
        raise NameMismatchError("checkpoint has no meta.config entry")
    try:
        return parse_config(_decode_text(entries["meta.config"]))
    except ConfigError as err:
        raise CheckpointError(f"stored config is invalid: {err}") from None


def load_checkpoint(path, with_optimizer: bool = True) -> tuple[GlasteModel, Trainer | None, int]:
    """Rebuild the model (and the trainer when moments are stored) from ``path``."""
    entries, step = read_entries(path)
    cfg = config_of(entries)
    model = GlasteModel(cfg)
    load_model_weights(model, entries, groups=GROUPS)
    if entries["meta.recognizer_frozen"][0]:
        model.freeze_recognizer()
    trainer = None
    if with_optimizer and "adam.g.t" in entries:
        trainer = Trainer(model)
        for tag, opt in (("g", trainer.opt_g), ("d", trainer.opt_d)):
            missing = [n for n, _ in opt.params if f"adam.{tag}.m.{n}" not in entries or f"adam.{tag}.v.{n}" not in entries]
            if missing:
                raise NameMismatchError(f"optimizer moments missing for groups {_missing_groups(set(missing))}")
            for name, _ in opt.params:
                opt.m[name] = entries[f"adam.{tag}.m.{name}"].copy()
                opt.v[name] = entries[f"adam.{tag}.v.{name}"].copy()
            opt.t = int(entries[f"adam.{tag}.t"][0])
        trainer.step = step
    return model, trainer, step


def load_model_weights(model: GlasteModel, entries: dict[str, np.ndarray], groups=GROUPS) -> None:
    """Copy stored weights of ``groups`` into ``model``; errors name missing or extra groups."""
    expected = {n: p for n, p in model.named_parameters() if n.split(".", 1)[0] in groups}
    stored = {n for n in entries if n.split(".", 1)[0] in groups}
    missing = set(expected) - stored
    if missing:
        raise NameMismatchError(f"checkpoint is missing parameter group(s) {_missing_groups(missing)}")
    extra = stored - set(expected)
    if extra:
        raise NameMismatchError(f"checkpoint has unexpected parameters in group(s) {_missing_groups(extra)}")
    for name, p in expected.items():
        arr = entries[name]
        if arr.shape != p.shape:
            raise NameMismatchError(f"parameter {name}: stored shape {arr.shape} != model shape {p.shape}")
        p.data = arr.astype(p.dtype, copy=True)


def stored_flags(path) -> Flags:
    entries, _ = read_entries(path)
    vals = entries["meta.flags"]
    return Flags(**{f: bool(v) for f, v in zip(FLAG_NAMES, vals)})

