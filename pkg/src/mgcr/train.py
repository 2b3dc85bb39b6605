"""Training, evaluation and prediction loops."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .config import TrainConfig
from .data import PairSample, load_split
from .fusion import ForwardResult, forward, init_params
from .imageio import normalize_to_byte, save_image, write_pgm
from .losses import LossWeights, bce_loss, mse_loss, total_loss
from .metrics import Counts, MetricsReport, compute_metrics, confusion_counts
from .optim import AdamWState, adamw_step, cosine_lr
from .params import ModelParams
from .tensor import Tensor, no_grad
from .text import Vocabulary, build_vocabulary, tokenize

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class StepRecord:
    epoch: int
    batch: int
    total: float
    bce: float
    mse_1: float
    mse_2: float


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    total: float
    bce: float
    mse_1: float
    mse_2: float
    val: dict | None = None


@dataclass
class TrainLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    steps: list[StepRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_f1: float = -1.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)


def attach_tokens(samples: list[PairSample], vocab: Vocabulary, length: int) -> None:
    for s in samples:
        s.tokens = [tokenize(s.caption_1.pruned_text, vocab, length),
                    tokenize(s.caption_2.pruned_text, vocab, length)]


def sample_loss(sample: PairSample, p: ModelParams, weights: LossWeights,
                mode: str = "train") -> tuple[Tensor, Tensor, Tensor, Tensor, ForwardResult]:
    res = forward(sample.image_1, sample.image_2, sample.tokens[0], sample.tokens[1], p, mode)
    bce = bce_loss(res.change_map.prob, sample.mask.astype(np.float64))
    if p.config.use_lvit:
        mse_1 = mse_loss(res.embedded[0], res.fused_visual[0])
        mse_2 = mse_loss(res.embedded[1], res.fused_visual[1])
    else:
        # without the fusion transformer there is no second feature set to compare
        mse_1 = mse_2 = Tensor(0.0)
    return total_loss(bce, mse_1, mse_2, weights), bce, mse_1, mse_2, res


def predict_binary(sample: PairSample, p: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    with no_grad():
        res = forward(sample.image_1, sample.image_2, sample.tokens[0], sample.tokens[1], p,
                      _stats_mode(p))
    return res.change_map.prob.data, res.change_map.binary


def evaluate_samples(samples: list[PairSample], p: ModelParams) -> tuple[MetricsReport, list[Counts]]:
    """Micro-average: confusion counts are summed over tiles before computing metrics."""
    per_tile = [confusion_counts(predict_binary(s, p)[1], s.mask) for s in samples]
    total = Counts()
    for c in per_tile:
        total = total + c
    return compute_metrics(total), per_tile


def _stats_mode(p: ModelParams) -> str:
    return "infer" if all(st.populated for st in p.stats.values()) else "train"


def train(cfg: TrainConfig, train_set: list[PairSample] | None = None,
          val_set: list[PairSample] | None = None, out_dir=None, save: bool = True
          ) -> tuple[ModelParams, TrainLog, Vocabulary]:
    """Seeded end-to-end loop: forward, loss, backward, AdamW per batch, cosine lr per epoch."""
    if train_set is None:
        train_set = load_split(cfg.data_dir, "train")
        val_set = load_split(cfg.data_dir, "val")
    if not train_set:
        raise TrainingError("training split is empty")
    val_set = val_set or []
    vocab = build_vocabulary([c for s in train_set
                              for c in (s.caption_1.pruned_text, s.caption_2.pruned_text)])
    cfg.model.vocab_size = len(vocab)
    cfg.model.seed = cfg.seed
    attach_tokens(train_set, vocab, cfg.model.text_len)
    attach_tokens(val_set, vocab, cfg.model.text_len)

    out = Path(out_dir or cfg.out_dir)
    if save:
        out.mkdir(parents=True, exist_ok=True)
        vocab.save(out / "vocab.txt")
    p = init_params(cfg.model)
    weights = cfg.weights
    state = AdamWState()
    history = TrainLog()
    rng = np.random.default_rng(cfg.seed)
    step = 0
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr, cfg.lr_min)
        order = rng.permutation(len(train_set))
        sums = np.zeros(4)
        t0 = time.perf_counter()
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = [train_set[i] for i in order[start:start + cfg.batch_size]]
            p.zero_grad()
            terms = np.zeros(4)
            for sample in batch:
                total, bce, m1, m2, _ = sample_loss(sample, p, weights)
                (total * (1.0 / len(batch))).backward()
                terms += [total.item(), bce.item(), m1.item(), m2.item()]
            terms /= len(batch)
            if not np.all(np.isfinite(terms)):
                raise TrainingError(f"non-finite loss at epoch {epoch} batch {b}: {terms.tolist()}")
            step += 1
            adamw_step({k: t.data for k, t in p.tensors.items()},
                       {k: t.grad for k, t in p.tensors.items() if t.grad is not None},
                       state, step, lr, (cfg.beta1, cfg.beta2), cfg.adam_eps, cfg.weight_decay)
            history.steps.append(StepRecord(epoch, b, *terms.tolist()))
            sums += terms * len(batch)
        sums /= len(train_set)
        rec = EpochRecord(epoch, lr, *sums.tolist())
        if val_set:
            report, _ = evaluate_samples(val_set, p)
            rec.val = report.to_dict()
            if report.f1 > history.best_f1:
                history.best_f1, history.best_epoch = report.f1, epoch
                if save:
                    ckpt.save_checkpoint(out / "best.ckpt", p, epoch)
        history.epochs.append(rec)
        log.info("epoch %d lr %.3g loss %.4f bce %.4f val F1 %s (%.1fs)", epoch, lr, rec.total,
                 rec.bce, "-" if rec.val is None else f"{rec.val['f1']:.4f}",
                 time.perf_counter() - t0)
    p.zero_grad()
    if save:
        ckpt.save_checkpoint(out / "last.ckpt", p, cfg.epochs - 1)
        if not val_set:
            ckpt.save_checkpoint(out / "best.ckpt", p, cfg.epochs - 1)
        (out / "train_log.json").write_text(history.to_json(), encoding="utf-8")
    return p, history, vocab


def load_model(checkpoint_path) -> tuple[ModelParams, Vocabulary]:
    path = Path(checkpoint_path)
    params, _ = ckpt.load_checkpoint(path)
    vocab_path = path.with_name("vocab.txt")
    if not vocab_path.exists():
        raise FileNotFoundError(f"vocabulary file {vocab_path} next to the checkpoint is missing")
    return params, Vocabulary.load(vocab_path)


def evaluate(checkpoint_path, data_dir, split: str = "test") -> MetricsReport:
    params, vocab = load_model(checkpoint_path)
    samples = load_split(data_dir, split)
    attach_tokens(samples, vocab, params.config.text_len)
    return evaluate_samples(samples, params)[0]


def heatmap_arrays(res: ForwardResult) -> dict[str, np.ndarray]:
    """Named 2-d maps per branch: adjacency, refined graph, per-head VR/LR attention."""
    maps = {}
    for b, out in enumerate(res.sgcm, 1):
        if out.z is not None:
            maps[f"b{b}_adjacency"] = out.z.data
            maps[f"b{b}_refined"] = out.refined.data
        for kind in ("vr", "lr"):
            for h, a in enumerate(out.attention.get(kind, [])):
                maps[f"b{b}_{kind}_head{h}"] = a
    return maps


def predict(checkpoint_path, pair_dir, out_dir, heatmaps: bool = False) -> list[Path]:
    from .data import read_pair

    params, vocab = load_model(checkpoint_path)
    sample = read_pair(pair_dir)
    attach_tokens([sample], vocab, params.config.text_len)
    with no_grad():
        res = forward(sample.image_1, sample.image_2, sample.tokens[0], sample.tokens[1],
                      params, _stats_mode(params))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "prob.pgm", out / "pred.pgm"]
    save_image(written[0], res.change_map.prob.data)
    save_image(written[1], res.change_map.binary)
    if heatmaps:
        for name, arr in heatmap_arrays(res).items():
            path = out / f"{name}.pgm"
            write_pgm(path, normalize_to_byte(arr))
            written.append(path)
    return written
