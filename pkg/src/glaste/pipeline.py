"""End-to-end editing model, the alternating GAN step and recognizer pretraining."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import data as D
from .config import TrainConfig
from .geometry import RotatedBox, affine_grid_sample, box_mask, rotated_crop, theta_from_box
from .losses import LossParts, ctc_loss, d_loss, g_adv_loss, l1_joint, perceptual_joint, total_g_loss
from .networks import (
    ContentEncoder,
    FeatureNet,
    FusionHead,
    Inpainter,
    PatchGAN,
    Recognizer,
    StyleEncoder,
    StyleProjections,
    Synthesizer,
    synth_sites,
)
from .nn import Module
from .optim import Adam
from .tensor import ContractError, Tensor, concat, no_grad
from .text import N_CLASSES, encode, greedy_ctc_decode

GENERATOR_GROUPS = ("inpainter", "style_encoder", "content_encoder", "synthesizer", "fusion_head", "style_projections")
DISCRIMINATOR_GROUPS = ("d1", "d2")
GROUPS = GENERATOR_GROUPS + DISCRIMINATOR_GROUPS + ("recognizer", "feat_net")


class NonFiniteLossError(FloatingPointError):
    pass


class RecognizerTrainingError(RuntimeError):
    pass


class GlasteModel(Module):
    def __init__(self, cfg: TrainConfig, seed: int | None = None):
        cfg.validate()
        net = cfg.net
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        self._cfg = cfg
        self.inpainter = Inpainter(rng, net)
        self.style_encoder = StyleEncoder(rng, net)
        self.content_encoder = ContentEncoder(rng, net)
        self.synthesizer = Synthesizer(rng, net, skip_connections=cfg.flags.skip_connections)
        self.fusion_head = FusionHead(rng, net)
        self.style_projections = StyleProjections(rng, net.style_dim, synth_sites(net))
        self.d1 = PatchGAN(rng, net.disc_widths)
        self.d2 = PatchGAN(rng, net.disc_widths)
        self.recognizer = Recognizer(rng, net, N_CLASSES)
        self.feat_net = FeatureNet(net)
        self._recognizer_frozen = False

    @property
    def cfg(self) -> TrainConfig:
        return self._cfg

    def group(self, name: str) -> Module:
        if name not in GROUPS:
            raise ContractError(f"unknown parameter group {name!r}")
        return getattr(self, name)

    def named_parameters(self, prefix: str = ""):
        for g in GROUPS:
            yield from getattr(self, g).named_parameters(f"{prefix}{g}.")

    def group_params(self, names: Sequence[str]) -> list[tuple[str, Tensor]]:
        return [(f"{g}.{n}", p) for g in names for n, p in getattr(self, g).named_parameters()]

    def freeze_recognizer(self) -> None:
        self.recognizer.freeze()
        self._recognizer_frozen = True

    @property
    def recognizer_frozen(self) -> bool:
        return self._recognizer_frozen


def param_hash(module: Module) -> str:
    h = hashlib.sha256()
    for name, p in module.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


# -- forward -----------------------------------------------------------------------
@dataclass
class ForwardOut:
    g_b: Tensor
    g_f: Tensor
    g_lc: Tensor
    warped: Tensor
    coverage: Tensor


def valid_columns(width: int, valid_w: float) -> np.ndarray:
    """1 on the centered columns that carry text, 0 on the padding."""
    j = np.arange(width, dtype=np.float64)
    return (np.abs(j - (width - 1) / 2.0) <= valid_w / 2.0 + 1e-9).astype(np.float64)


def fusion_thetas(boxes, fg_w: int, fg_h: int, canvas_w: int, canvas_h: int, valid_w: Sequence[float]):
    return [theta_from_box(b, (fg_w, fg_h), (canvas_w, canvas_h), valid_size=(v, fg_h)) for b, v in zip(boxes, valid_w)]


def masked_input(scene: Tensor, boxes: Sequence[RotatedBox]) -> Tensor:
    n, _, h, w = scene.shape
    m = np.stack([box_mask(b, h, w) for b in boxes])[:, None].astype(scene.dtype)
    return concat([scene * (1.0 - m), Tensor(m)], axis=1)


def glaste_forward(model: GlasteModel, scene: Tensor, boxes: Sequence[RotatedBox], content: Tensor,
                   valid_w: Sequence[float] | None = None) -> ForwardOut:
    """Inpaint the box, synthesize styled text, warp it into the box and fuse."""
    n, _, h, w = scene.shape
    if len(boxes) != n or content.shape[0] != n:
        raise ContractError(f"batch mismatch: {n} scenes, {len(boxes)} boxes, {content.shape[0]} content images")
    hc, wc = content.shape[2:]
    valid_w = list(valid_w) if valid_w is not None else [float(wc)] * n
    g_b = model.inpainter(masked_input(scene, boxes))
    z = model.style_encoder(scene, boxes)
    g_f = model.synthesizer(model.content_encoder(content), z, model.style_projections)
    thetas = fusion_thetas(boxes, wc, hc, w, h, valid_w)
    cols = np.stack([valid_columns(wc, v) for v in valid_w]).astype(scene.dtype)[:, None, None, :]
    support = np.broadcast_to(cols, (n, 1, hc, wc)).copy()
    warped = affine_grid_sample(g_f * support, thetas, h, w)
    coverage = affine_grid_sample(Tensor(support), thetas, h, w).detach()
    g_lc = model.fusion_head(g_b, warped, coverage)
    return ForwardOut(g_b, g_f, g_lc, warped, coverage)


def extract_local(img: Tensor, boxes, out_h: int, out_w: int) -> Tensor:
    """Upright per-pixel resampling of each box region (no pooling)."""
    return rotated_crop(img, boxes, out_h, out_w)


# -- training ----------------------------------------------------------------------
@dataclass
class StepRecord:
    step: int
    d: float
    g_adv: float
    l1: float
    per: float
    ctc: float
    total: float

    def line(self) -> str:
        return (f"step={self.step} d={self.d:.6f} g_adv={self.g_adv:.6f} l1={self.l1:.6f} "
                f"per={self.per:.6f} ctc={self.ctc:.6f} total={self.total:.6f}")


class Trainer:
    """Owns the two optimizers and the step counter for GLASTE training."""

    def __init__(self, model: GlasteModel):
        self.model = model
        cfg = model.cfg
        self.opt_g = Adam(model.group_params(GENERATOR_GROUPS), lr=cfg.lr)
        self.opt_d = Adam(model.group_params(DISCRIMINATOR_GROUPS), lr=cfg.lr)
        self.step = 0

    def tensors(self, batch: D.Batch):
        return Tensor(batch.scene), Tensor(batch.content), Tensor(batch.gt)

    def train_step(self, batch: D.Batch) -> StepRecord:
        model, cfg = self.model, self.model.cfg
        w = cfg.effective_loss()
        if w.lambda3 > 0 and not model.recognizer_frozen:
            raise ContractError("the recognizer must be pretrained and frozen before its loss is used")
        ph, pw = cfg.net.patch_h, cfg.net.patch_w
        scene, content, gt = self.tensors(batch)
        out = glaste_forward(model, scene, batch.boxes, content, batch.valid_w)
        g_lc = out.g_lc
        use_local = w.alpha > 0 or w.beta > 0 or w.lambda3 > 0
        g_c = extract_local(g_lc, batch.boxes, ph, pw) if use_local else None
        i_s = extract_local(gt, batch.boxes, ph, pw) if use_local else None

        # discriminators on detached generator outputs
        self.opt_d.zero_grad()
        fake = g_lc.detach()
        fake_patch = g_c.detach() if g_c is not None else None
        use_d2 = w.alpha > 0
        obj = d_loss(model.d1(gt), model.d1(fake),
                     model.d2(i_s) if use_d2 else None, model.d2(fake_patch) if use_d2 else None, w.alpha)
        loss_d = -obj
        _check_finite("d", loss_d)
        loss_d.backward()
        self.opt_d.step()

        # generator; discriminator weights act as constants here
        d_params = [p for _, p in self.opt_d.params]
        for p in d_params:
            p.requires_grad = False
        try:
            self.opt_g.zero_grad()
            adv = g_adv_loss(model.d1(g_lc), model.d2(g_c) if use_d2 else None, w.alpha)
            l1 = l1_joint(g_lc, gt, g_c, i_s, w.beta)
            per = perceptual_joint(g_lc, gt, g_c, i_s, w.beta, model.feat_net)
            rec = None
            if w.lambda3 > 0:
                rec = ctc_loss(model.recognizer(g_c), [encode(t) for t in batch.targets])
            parts = LossParts(adv, l1, per, rec)
            total = total_g_loss(parts, w)
            for name, t in (("g_adv", adv), ("l1", l1), ("per", per), ("ctc", rec), ("total", total)):
                if t is not None:
                    _check_finite(name, t)
            total.backward()
            self.opt_g.step()
        finally:
            for p in d_params:
                p.requires_grad = True
                p.grad = None
        self.step += 1
        return StepRecord(self.step, loss_d.item(), adv.item(), l1.item(), per.item(),
                          rec.item() if rec is not None else 0.0, total.item())


def _check_finite(name: str, t: Tensor) -> None:
    if not np.all(np.isfinite(t.data)):
        raise NonFiniteLossError(f"non-finite {name} loss: {t.data}")


def data_config(cfg: TrainConfig) -> D.DataConfig:
    return D.DataConfig(canvas_h=cfg.net.canvas_h, canvas_w=cfg.net.canvas_w, content_h=cfg.net.content_h)


def batch_seeds(cfg: TrainConfig, step: int) -> list[int]:
    """Seeds of the batch used at ``step``: a fixed pool when dataset_size > 0."""
    base = cfg.seed * 1_000_003
    b = cfg.batch_size
    if cfg.dataset_size > 0:
        return [base + (step * b + i) % cfg.dataset_size for i in range(b)]
    return [base + cfg.dataset_size + step * b + i for i in range(b)]


class BatchSource:
    """Renders batches by step; caches them when the pool is fixed."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.dcfg = data_config(cfg)
        self._cache: dict[tuple[int, ...], D.Batch] = {}

    def __call__(self, step: int) -> D.Batch:
        seeds = tuple(batch_seeds(self.cfg, step))
        if seeds in self._cache:
            return self._cache[seeds]
        b = D.collate(D.make_batch(seeds, self.cfg.effective_mix_ratio(), self.dcfg))
        if self.cfg.dataset_size > 0:
            self._cache[seeds] = b
        return b


def train(trainer: Trainer, steps: int, source: Callable[[int], D.Batch] | None = None,
          on_step: Callable[[StepRecord], None] | None = None) -> list[StepRecord]:
    source = source or BatchSource(trainer.model.cfg)
    records = []
    for _ in range(steps):
        rec = trainer.train_step(source(trainer.step))
        records.append(rec)
        if on_step is not None:
            on_step(rec)
    return records


# -- recognizer ----------------------------------------------------------------------
EVAL_SEED_OFFSET = 900_000_000  # early-stopping crops
TEST_SEED_OFFSET = 950_000_000  # final held-out measurement, never used for stopping


def crop_batch(seeds: Sequence[int], cfg: TrainConfig) -> tuple[np.ndarray, list[str]]:
    dcfg = data_config(cfg)
    crops = [D.render_crop(s, cfg.net.patch_h, cfg.net.patch_w, dcfg) for s in seeds]
    return np.stack([c for c, _ in crops]).astype(np.float32), [t for _, t in crops]


def recognize(model: GlasteModel, images: np.ndarray, chunk: int = 64) -> list[str]:
    out = []
    with no_grad():
        for i in range(0, len(images), chunk):
            out.extend(greedy_ctc_decode(model.recognizer(Tensor(images[i:i + chunk]))))
    return out


def recognizer_accuracy(model: GlasteModel, cfg: TrainConfig, n: int | None = None, base: int | None = None) -> float:
    """Sequence accuracy on ``n`` held-out crops; ``base`` picks the seed range."""
    n = n or cfg.rec_eval_size
    base = EVAL_SEED_OFFSET + cfg.seed * 10_007 if base is None else base
    images, texts = crop_batch(range(base, base + n), cfg)
    preds = recognize(model, images)
    return float(np.mean([p == t for p, t in zip(preds, texts)]))


@dataclass
class PretrainResult:
    steps: int
    accuracy: float
    losses: list[float]


def pretrain_recognizer(model: GlasteModel, cfg: TrainConfig | None = None,
                        log: Callable[[str], None] | None = None) -> PretrainResult:
    """Train the recognizer alone with CTC until the held-out target is met, then freeze it."""
    cfg = cfg or model.cfg
    if model.recognizer_frozen:
        raise ContractError("recognizer is already frozen")
    opt = Adam(model.group_params(("recognizer",)), lr=cfg.rec_lr)
    losses = []
    acc = 0.0
    step = 0
    for step in range(1, cfg.rec_steps + 1):
        seeds = range(cfg.seed * 1_000_003 + (step - 1) * cfg.rec_batch, cfg.seed * 1_000_003 + step * cfg.rec_batch)
        images, texts = crop_batch(seeds, cfg)
        opt.zero_grad()
        loss = ctc_loss(model.recognizer(Tensor(images)), [encode(t) for t in texts])
        _check_finite("ctc", loss)
        loss.backward()
        opt.step()
        losses.append(loss.item())
        if step % cfg.rec_eval_every == 0 or step == cfg.rec_steps:
            acc = recognizer_accuracy(model, cfg)
            if log is not None:
                log(f"step={step} ctc={np.mean(losses[-cfg.rec_eval_every:]):.6f} acc={acc:.4f}")
            if acc >= cfg.rec_target_acc:
                break
    if acc < 0.5:
        raise RecognizerTrainingError(f"recognizer reached only {acc:.3f} accuracy after {step} steps")
    model.freeze_recognizer()
    return PretrainResult(step, acc, losses)
