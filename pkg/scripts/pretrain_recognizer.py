"""Pretrain the toy recognizer and report held-out sequence accuracy.

    python3 scripts/pretrain_recognizer.py --config configs/toy.cfg --out runs/recognizer.ckpt
"""

import argparse
from pathlib import Path

from glaste.config import load_config
from glaste.experiments import run_pretrain


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/toy.cfg")
    ap.add_argument("--out", default="runs/recognizer.ckpt")
    ap.add_argument("--test-size", type=int, default=1000)
    args = ap.parse_args()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _, run = run_pretrain(load_config(args.config), out, args.test_size, log=print)
    print(f"steps={run.steps} stop_acc={run.stop_accuracy:.4f} test_acc={run.test_accuracy:.4f} seconds={run.seconds:.0f}")


if __name__ == "__main__":
    main()
