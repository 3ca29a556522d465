"""Overfit GLASTE on a fixed set of 8 paired scenes and report patch quality.

    python3 scripts/overfit.py --recognizer runs/recognizer.ckpt
"""

import argparse

from glaste.config import load_config
from glaste.experiments import overfit_config, run_overfit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/toy.cfg")
    ap.add_argument("--recognizer", help="checkpoint holding a trained recognizer (needed when lambda3 > 0)")
    ap.add_argument("--steps", type=int, default=3000)
    ap.add_argument("--samples", type=int, default=8)
    args = ap.parse_args()
    cfg = overfit_config(load_config(args.config), args.samples, args.steps)
    run = run_overfit(cfg, args.recognizer, log=print)
    print(f"first_total={run.first_total:.4f} last_total={run.last_total:.4f} reduction={run.reduction:.3f} "
          f"patch_ssim={run.patch_ssim:.4f} patch_l1={run.patch_l1:.4f} seconds={run.seconds:.0f}")


if __name__ == "__main__":
    main()
