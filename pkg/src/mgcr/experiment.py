"""Toy end-to-end experiment: generate a dataset, train, score the held-out split."""
from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

from .config import TrainConfig
from .data import GenConfig, generate_dataset, load_split
from .metrics import MetricsReport
from .params import ModelConfig
from .train import attach_tokens, evaluate_samples, train


@dataclass
class ToyResult:
    seed: int
    sgcm: bool
    test: MetricsReport
    best_val_f1: float
    seconds: float


def toy_config(seed: int, sgcm: bool = True, epochs: int = 30) -> TrainConfig:
    model = ModelConfig(d=32, sgcm_vision=sgcm, sgcm_language=sgcm)
    return TrainConfig(epochs=epochs, batch_size=8, seed=seed, model=model)


def ensure_dataset(root, seed: int, n_pairs: int = 200) -> Path:
    root = Path(root)
    if not (root / "split.tsv").exists():
        generate_dataset(root, n_pairs, GenConfig(), seed=seed)
    return root


def run_toy(seed: int, sgcm: bool, data_root, out_dir=None, epochs: int = 30) -> ToyResult:
    """Train on the generated train split and report micro-averaged test metrics of the final weights."""
    t0 = time.perf_counter()
    cfg = toy_config(seed, sgcm, epochs)
    train_set, val_set, test_set = (load_split(data_root, s) for s in ("train", "val", "test"))
    params, history, vocab = train(cfg, train_set, val_set, out_dir=out_dir, save=out_dir is not None)
    attach_tokens(test_set, vocab, cfg.model.text_len)
    report, _ = evaluate_samples(test_set, params)
    return ToyResult(seed, sgcm, report, history.best_f1, time.perf_counter() - t0)
