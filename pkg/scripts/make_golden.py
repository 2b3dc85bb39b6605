"""Regenerate the frozen golden fixture: a tiny dataset, a short-run checkpoint and its test metrics.

Run only when the checkpoint format or model changes on purpose:

    python scripts/make_golden.py tests/fixtures/golden
"""
import argparse
import shutil
from pathlib import Path

from mgcr.config import TrainConfig
from mgcr.data import GenConfig, generate_dataset
from mgcr.params import ModelConfig
from mgcr.train import evaluate, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out", type=Path)
    args = ap.parse_args()
    if args.out.exists():
        shutil.rmtree(args.out)
    data = args.out / "data"
    generate_dataset(data, 20, GenConfig(), seed=11)
    model = ModelConfig(channels=(8, 8, 16, 16), d=16, heads=2, text_len=12, ffn_mult=2)
    cfg = TrainConfig(epochs=25, batch_size=2, lr=2e-3, seed=5, data_dir=str(data), model=model)
    train(cfg, out_dir=args.out / "run")
    for extra in ("last.ckpt", "train_log.json"):
        (args.out / "run" / extra).unlink()
    report = evaluate(args.out / "run" / "best.ckpt", data, "test")
    (args.out / "metrics.json").write_text(report.to_json() + "\n", encoding="utf-8")
    print(report.to_text(), end="")


if __name__ == "__main__":
    main()
