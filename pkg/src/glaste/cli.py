"""Command-line entry points.

Exit codes: 0 success, 1 validation failure, 2 runtime abort.
"""

from __future__ import annotations

import argparse
import sys
import time
import zlib
from pathlib import Path

import numpy as np

from . import data as D
from .checkpoint import CheckpointError, load_checkpoint, load_model_weights, read_entries, save_checkpoint
from .config import ConfigError, dump_config, load_config, schema_lines
from .geometry import RotatedBox
from .imageio import load_image, save_image
from .metrics import accuracy_and_cer, mse, psnr, ssim, to_unit
from .optim import NonFiniteGradientError
from .pipeline import (
    BatchSource,
    GlasteModel,
    NonFiniteLossError,
    RecognizerTrainingError,
    Trainer,
    extract_local,
    glaste_forward,
    pretrain_recognizer,
    recognize,
)
from .tensor import ContractError, Tensor, no_grad
from .text import ALPHABET, UnsupportedCharacterError, encode

EXIT_OK, EXIT_INVALID, EXIT_ABORT = 0, 1, 2
EVAL_BASE_SEED = 700_000_000
LENGTH_BUCKETS = (1, 2, 9, 10)


class UsageError(Exception):
    pass


def _say(msg: str) -> None:
    print(msg, flush=True)


# -- gradcheck ---------------------------------------------------------------------
def cmd_gradcheck(args) -> int:
    from . import gradcheck

    try:
        results = gradcheck.run(args.filter or "", seeds=args.seeds)
    except KeyError as err:
        raise UsageError(str(err.args[0])) from None
    ok = True
    for r in results:
        status = "ok" if r.passed else "FAIL"
        _say(f"op={r.name} seeds={r.seeds} max_rel_err={r.max_rel_err:.3e} {status}")
        ok &= r.passed
    _say(f"gradcheck {'passed' if ok else 'failed'}: {sum(r.passed for r in results)}/{len(results)} ops below {gradcheck.TOL:g}")
    return EXIT_OK if ok else EXIT_INVALID


# -- training ----------------------------------------------------------------------
def _apply_flag_overrides(cfg, args):
    for flag in ("skip_connections", "local_loss", "paired_data", "use_recognizer"):
        if getattr(args, f"no_{flag}", False):
            setattr(cfg.flags, flag, False)
    if getattr(args, "steps", None):
        cfg.iterations = args.steps
    cfg.validate()
    return cfg


def cmd_pretrain_recognizer(args) -> int:
    cfg = _apply_flag_overrides(load_config(args.config), args)
    if args.steps:
        cfg.rec_steps = args.steps
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = GlasteModel(cfg)
    with open(out / "recognizer.log", "w") as log:
        def emit(line):
            log.write(line + "\n")
            log.flush()
            _say(line)

        start = time.time()
        res = pretrain_recognizer(model, cfg, log=emit)
        emit(f"done steps={res.steps} acc={res.accuracy:.4f} seconds={time.time() - start:.1f}")
    save_checkpoint(out / "recognizer.ckpt", model)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _apply_flag_overrides(load_config(args.config), args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(dump_config(cfg))
    model = GlasteModel(cfg)
    if cfg.effective_loss().lambda3 > 0:
        if args.recognizer:
            entries, _ = read_entries(args.recognizer)
            load_model_weights(model, entries, groups=("recognizer",))
            model.freeze_recognizer()
        else:
            _say("no --recognizer checkpoint given; pretraining one first")
            pretrain_recognizer(model, cfg, log=_say)
    trainer = Trainer(model)
    source = BatchSource(cfg)
    log_path = out / "loss.log"
    with open(log_path, "w") as log:
        while trainer.step < cfg.iterations:
            try:
                rec = trainer.train_step(source(trainer.step))
            except (NonFiniteLossError, NonFiniteGradientError) as err:
                dump = save_checkpoint(out / "abort_state.ckpt", model, trainer)
                _say(f"aborted at step {trainer.step + 1}: {err}; state dumped to {dump}")
                return EXIT_ABORT
            log.write(rec.line() + "\n")
            if rec.step % cfg.log_every == 0 or rec.step == 1:
                log.flush()
                _say(rec.line())
            if rec.step % cfg.checkpoint_every == 0:
                save_checkpoint(out / f"step_{rec.step:07d}.ckpt", model, trainer)
    save_checkpoint(out / "final.ckpt", model, trainer)
    _say(f"wrote {out / 'final.ckpt'}")
    return EXIT_OK


# -- editing -----------------------------------------------------------------------
def parse_box(text: str) -> RotatedBox:
    try:
        cx, cy, w, h, deg = (float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"box must be 'cx,cy,w,h,deg', got {text!r}") from None
    return RotatedBox.from_degrees(cx, cy, w, h, deg)


def edit_image(model: GlasteModel, scene: np.ndarray, box: RotatedBox, text: str):
    """Run the editor on one [3,H,W] scene; returns the forward record."""
    encode(text)
    h, w = scene.shape[1:]
    if not box.inside(w, h):
        raise ContractError(f"box {box} lies outside the {w}x{h} image")
    content, valid = D.render_content(text, model.cfg.net.content_h)
    with no_grad():
        return glaste_forward(model, Tensor(scene[None]), [box], Tensor(content[None]), [valid])


def cmd_edit(args) -> int:
    model, _, _ = load_checkpoint(args.checkpoint, with_optimizer=False)
    scene = load_image(args.scene)
    out = edit_image(model, scene, parse_box(args.box), args.text)
    path = Path(args.out)
    written = save_image(path, out.g_lc.data[0])
    if args.debug_intermediates:
        save_image(path.with_name(path.stem + "_gb" + written.suffix), out.g_b.data[0])
        save_image(path.with_name(path.stem + "_gf" + written.suffix), out.g_f.data[0])
    _say(f"wrote {written}")
    return EXIT_OK


# -- evaluation --------------------------------------------------------------------
def _random_word(rng, length: int) -> str:
    return "".join(ALPHABET[i] for i in rng.integers(len(ALPHABET), size=length))


def _measure(model, samples, chunk: int = 8):
    cfg = model.cfg
    ph, pw = cfg.net.patch_h, cfg.net.patch_w
    fulls, patches, gt_full, gt_patch, texts, preds = [], [], [], [], [], []
    for i in range(0, len(samples), chunk):
        b = D.collate(samples[i:i + chunk])
        with no_grad():
            out = glaste_forward(model, Tensor(b.scene), b.boxes, Tensor(b.content), b.valid_w)
            g_c = extract_local(out.g_lc, b.boxes, ph, pw)
            i_s = extract_local(Tensor(b.gt), b.boxes, ph, pw)
        fulls.append(out.g_lc.data)
        gt_full.append(b.gt)
        patches.append(g_c.data)
        gt_patch.append(i_s.data)
        preds.extend(recognize(model, g_c.data))
        texts.extend(b.targets)
    f, gf = to_unit(np.concatenate(fulls)), to_unit(np.concatenate(gt_full))
    p, gp = to_unit(np.concatenate(patches)), to_unit(np.concatenate(gt_patch))
    acc, cer = accuracy_and_cer(preds, texts)
    return {
        "patch.mse": mse(p, gp), "patch.psnr": psnr(p, gp), "patch.ssim": ssim(p, gp),
        "full.mse": mse(f, gf), "full.psnr": psnr(f, gf), "full.ssim": ssim(f, gf),
        "acc": acc, "cer": cer,
    }


def split_offset(split: str) -> int:
    """Stable seed offset per split name (str hashes vary between processes)."""
    return {"test": 0, "val": 500_000}.get(split, 1_000_000 + 200_000 * (zlib.crc32(split.encode()) % 500))


def evaluate(model: GlasteModel, split: str = "test", size: int = 64, bucket_size: int = 16) -> list[tuple[str, str, float]]:
    dcfg = D.DataConfig(canvas_h=model.cfg.net.canvas_h, canvas_w=model.cfg.net.canvas_w, content_h=model.cfg.net.content_h)
    base = EVAL_BASE_SEED + split_offset(split)
    rows = []
    recon = [D.render_sample(base + i, "real", dcfg) for i in range(size)]
    for k, v in _measure(model, recon).items():
        rows.append((f"reconstruct.{k}", split, v))
    gen = [D.render_sample(base + size + i, "paired", dcfg) for i in range(size)]
    for k, v in _measure(model, gen).items():
        rows.append((f"generate.{k}", split, v))
    for length in LENGTH_BUCKETS:
        rng = np.random.default_rng([base, length])
        seeds = [base + 10_000 * length + i for i in range(bucket_size)]
        samples = [D.render_sample(s, "paired", dcfg, target_text=_random_word(rng, length)) for s in seeds]
        res = _measure(model, samples)
        rows.append((f"generate.len{length}.acc", split, res["acc"]))
        rows.append((f"generate.len{length}.cer", split, res["cer"]))
    return rows


def cmd_eval(args) -> int:
    model, _, _ = load_checkpoint(args.checkpoint, with_optimizer=False)
    rows = evaluate(model, args.split, size=args.size, bucket_size=args.bucket_size)
    lines = [f"metric={m} split={s} value={v:.6f}" for m, s, v in rows]
    Path(args.report).write_text("\n".join(lines) + "\n")
    for line in lines:
        _say(line)
    return EXIT_OK


def cmd_config_schema(args) -> int:
    for line in schema_lines():
        _say(line)
    return EXIT_OK


# -- parser ------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="glaste", description="Toy scene-text editing: training, editing, evaluation.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    g.add_argument("filter", nargs="?", default="", help="substring or glob over op names")
    g.add_argument("--seeds", type=int, default=10)
    g.set_defaults(func=cmd_gradcheck)

    def training_flags(sp):
        sp.add_argument("--config", default=None)
        sp.add_argument("--out", required=True)
        sp.add_argument("--steps", type=int, default=None, help="override the iteration budget")
        sp.add_argument("--no-skip-connections", action="store_true")
        sp.add_argument("--no-local-loss", action="store_true")
        sp.add_argument("--no-paired-data", action="store_true")
        sp.add_argument("--no-recognizer", dest="no_use_recognizer", action="store_true")

    r = sub.add_parser("pretrain-recognizer", help="train the CTC recognizer on synthetic crops")
    training_flags(r)
    r.set_defaults(func=cmd_pretrain_recognizer)

    t = sub.add_parser("train", help="train the editor")
    training_flags(t)
    t.add_argument("--recognizer", default=None, help="checkpoint holding a pretrained recognizer")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("edit", help="replace the text inside a box")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--scene", required=True)
    e.add_argument("--box", required=True, help="cx,cy,w,h,deg (angle in degrees)")
    e.add_argument("--text", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--debug-intermediates", action="store_true")
    e.set_defaults(func=cmd_edit)

    v = sub.add_parser("eval", help="metrics on a held-out synthetic split")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--split", default="test")
    v.add_argument("--report", required=True)
    v.add_argument("--size", type=int, default=64)
    v.add_argument("--bucket-size", type=int, default=16)
    v.set_defaults(func=cmd_eval)

    s = sub.add_parser("config-schema", help="print accepted config keys")
    s.set_defaults(func=cmd_config_schema)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except (ConfigError, ContractError, CheckpointError, UnsupportedCharacterError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except (NonFiniteLossError, NonFiniteGradientError, RecognizerTrainingError) as err:
        print(f"aborted: {err}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
