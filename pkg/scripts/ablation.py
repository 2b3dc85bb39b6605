"""Full model versus the graph-module ablation on several seeds; prints a table and optional JSON.

    python scripts/ablation.py --seeds 0 1 2 --json runs/ablation.json
"""
import argparse
import json
from dataclasses import asdict
from pathlib import Path

from mgcr.experiment import ensure_dataset, run_toy


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--data-root", type=Path, default=Path("runs"))
    ap.add_argument("--json", type=Path, default=None)
    args = ap.parse_args()
    rows = []
    print(f"{'seed':>4} {'variant':>8} {'F1':>7} {'IoU':>7} {'P':>7} {'R':>7} {'secs':>6}")
    for seed in args.seeds:
        root = ensure_dataset(args.data_root / f"data_seed{seed}", seed=seed)
        for sgcm in (True, False):
            r = run_toy(seed, sgcm, root, epochs=args.epochs)
            rows.append(r)
            m = r.test
            print(f"{seed:>4} {'full' if sgcm else 'no-sgcm':>8} {100 * m.f1:7.2f} {100 * m.iou:7.2f} "
                  f"{100 * m.precision:7.2f} {100 * m.recall:7.2f} {r.seconds:6.0f}")
    if args.json:
        args.json.parent.mkdir(parents=True, exist_ok=True)
        args.json.write_text(json.dumps([asdict(r) for r in rows], indent=2, default=str) + "\n")


if __name__ == "__main__":
    main()
