"""Scaled-down experiments: recognizer pretraining, overfitting and ablation smoke runs."""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import data as D
from .checkpoint import load_model_weights, read_entries, save_checkpoint, stored_flags
from .config import Flags, TrainConfig, load_config
from .metrics import ssim, to_unit
from .pipeline import (TEST_SEED_OFFSET, BatchSource, GlasteModel, Trainer, extract_local, glaste_forward,
                       pretrain_recognizer, recognizer_accuracy, train)
from .tensor import Tensor, no_grad

Log = Callable[[str], None]

ABLATIONS = {
    "no_skip": "skip_connections",
    "no_local": "local_loss",
    "no_paired": "paired_data",
    "no_rec": "use_recognizer",
}


@dataclass
class RecognizerRun:
    steps: int
    stop_accuracy: float
    test_accuracy: float
    seconds: float


def run_pretrain(cfg: TrainConfig, out: Path | None = None, test_size: int = 1000, log: Log | None = None):
    """Pretrain the recognizer, then score it on crops never used for stopping."""
    model = GlasteModel(cfg)
    t0 = time.perf_counter()
    res = pretrain_recognizer(model, cfg, log=log)
    seconds = time.perf_counter() - t0
    test_acc = recognizer_accuracy(model, cfg, n=test_size, base=TEST_SEED_OFFSET)
    if out is not None:
        save_checkpoint(out, model)
    return model, RecognizerRun(res.steps, res.accuracy, test_acc, seconds)


def attach_recognizer(model: GlasteModel, source: GlasteModel | str | Path) -> None:
    """Copy frozen recognizer weights from another model or a checkpoint file."""
    if isinstance(source, GlasteModel):
        entries = {n: p.data for n, p in source.named_parameters() if n.startswith("recognizer.")}
    else:
        entries, _ = read_entries(source)
    load_model_weights(model, entries, groups=("recognizer",))
    model.freeze_recognizer()


def patch_scores(model: GlasteModel, batch: D.Batch) -> tuple[float, float]:
    """Mean per-sample SSIM and L1 on [0, 1] between generated and ground-truth patches."""
    ph, pw = model.cfg.net.patch_h, model.cfg.net.patch_w
    with no_grad():
        out = glaste_forward(model, Tensor(batch.scene), batch.boxes, Tensor(batch.content), batch.valid_w)
        fake = to_unit(extract_local(out.g_lc, batch.boxes, ph, pw).data)
        real = to_unit(extract_local(Tensor(batch.gt), batch.boxes, ph, pw).data)
    s = [ssim(f[None], r[None]) for f, r in zip(fake, real)]
    return float(np.mean(s)), float(np.mean(np.abs(fake - real)))


@dataclass
class OverfitRun:
    first_total: float
    last_total: float
    patch_ssim: float
    patch_l1: float
    seconds: float
    totals: list[float]

    @property
    def reduction(self) -> float:
        return 1.0 - self.last_total / self.first_total


def overfit_config(base: TrainConfig, samples: int = 8, steps: int = 3000) -> TrainConfig:
    """A fixed pool of ``samples`` paired scenes, fed as one full batch each step."""
    return dataclasses.replace(base, dataset_size=samples, batch_size=samples, mix_ratio=1.0, iterations=steps)


def run_overfit(cfg: TrainConfig, recognizer=None, log: Log | None = None, log_every: int = 100) -> OverfitRun:
    model = GlasteModel(cfg)
    if cfg.effective_loss().lambda3 > 0:
        if recognizer is None:
            raise ValueError("the recognition loss is on but no recognizer was given")
        attach_recognizer(model, recognizer)
    trainer = Trainer(model)
    source = BatchSource(cfg)
    t0 = time.perf_counter()
    totals: list[float] = []

    def on_step(rec):
        totals.append(rec.total)
        if log is not None and (rec.step % log_every == 0 or rec.step == 1):
            log(rec.line() + f" t={time.perf_counter() - t0:.0f}")

    train(trainer, cfg.iterations, source, on_step)
    seconds = time.perf_counter() - t0
    s, l1 = patch_scores(model, source(0))
    # single-step totals are noisy under the adversarial term; average the ends
    k = min(10, len(totals))
    return OverfitRun(float(np.mean(totals[:1])), float(np.mean(totals[-k:])), s, l1, seconds, totals)


@dataclass
class AblationRun:
    name: str
    flag: str
    stored: Flags
    steps: int


def run_ablation(name: str, config_dir: Path, out_dir: Path, recognizer=None, steps: int | None = None) -> AblationRun:
    cfg = load_config(Path(config_dir) / f"{name}.cfg")
    steps = steps or cfg.iterations
    model = GlasteModel(cfg)
    if cfg.effective_loss().lambda3 > 0:
        if recognizer is None:
            raise ValueError(f"{name}: the recognition loss is on but no recognizer was given")
        attach_recognizer(model, recognizer)
    trainer = Trainer(model)
    train(trainer, steps)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = save_checkpoint(out_dir / f"{name}.ckpt", model, trainer)
    return AblationRun(name, ABLATIONS[name], stored_flags(path), trainer.step)
