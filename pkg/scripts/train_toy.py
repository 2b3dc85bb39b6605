"""Train one model on a generated 200-pair dataset and print held-out metrics.

    python scripts/train_toy.py --seed 0 --out runs/toy0
    python scripts/train_toy.py --seed 0 --no-sgcm --epochs 10
"""
import argparse
from pathlib import Path

from mgcr.experiment import ensure_dataset, run_toy


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--data", type=Path, default=None, help="dataset root (generated if missing)")
    ap.add_argument("--out", type=Path, default=None, help="run directory for checkpoints and logs")
    ap.add_argument("--no-sgcm", action="store_true", help="disable both graph reconstruction gates")
    args = ap.parse_args()
    root = ensure_dataset(args.data or Path(f"runs/data_seed{args.seed}"), seed=args.seed)
    res = run_toy(args.seed, not args.no_sgcm, root, args.out, args.epochs)
    print(res.test.to_text(), end="")
    print(f"best val F1 {res.best_val_f1:.4f}; {res.seconds:.0f}s")


if __name__ == "__main__":
    main()
