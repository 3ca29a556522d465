"""Smoke-train the four ablation configs and print the flag each checkpoint stores.

    python3 scripts/ablations.py --recognizer runs/recognizer.ckpt --out runs/ablations
"""

import argparse
from pathlib import Path

from glaste.experiments import ABLATIONS, run_ablation


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--configs", default="configs")
    ap.add_argument("--recognizer", required=True)
    ap.add_argument("--out", default="runs/ablations")
    ap.add_argument("--steps", type=int)
    args = ap.parse_args()
    for name in ABLATIONS:
        run = run_ablation(name, Path(args.configs), Path(args.out), args.recognizer, args.steps)
        print(f"{name} steps={run.steps} {run.flag}={getattr(run.stored, run.flag)}")


if __name__ == "__main__":
    main()
