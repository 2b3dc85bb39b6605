"""Pixel-level change-detection metrics with micro-averaging over tiles."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np

from .tensor import ShapeError


@dataclass(frozen=True)
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    fn: int
    tn: int
    f1: float
    iou: float
    precision: float
    recall: float

    @property
    def counts(self) -> Counts:
        return Counts(self.tp, self.fp, self.fn, self.tn)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_text(self) -> str:
        lines = [f"{k.upper()} = {getattr(self, k)}" for k in ("tp", "fp", "fn", "tn")]
        lines += [f"{name} = {pct(getattr(self, key))}" for name, key in
                  (("F1", "f1"), ("IoU", "iou"), ("Precision", "precision"), ("Recall", "recall"))]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


def pct(x: float) -> str:
    return f"{100.0 * x:.2f}"


def confusion_counts(pred, gt) -> Counts:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return Counts(tp, fp, fn, pred.size - tp - fp - fn)


def _ratio(num: int, den: int, empty: float) -> float:
    return num / den if den else empty


def compute_metrics(counts: Counts) -> MetricsReport:
    """F1, IoU, precision, recall; empty denominators score 1 when nothing was missed."""
    tp, fp, fn, tn = counts.tp, counts.fp, counts.fn, counts.tn
    if min(tp, fp, fn, tn) < 0:
        raise ValueError(f"negative confusion counts: {counts}")
    perfect = 1.0 if fp + fn == 0 else 0.0
    return MetricsReport(
        tp, fp, fn, tn,
        f1=_ratio(2 * tp, 2 * tp + fp + fn, 1.0),
        iou=_ratio(tp, tp + fp + fn, 1.0),
        precision=_ratio(tp, tp + fp, perfect),
        recall=_ratio(tp, tp + fn, perfect),
    )


def micro_average(pairs: Iterable[tuple[np.ndarray, np.ndarray]]) -> MetricsReport:
    total = Counts()
    for pred, gt in pairs:
        total = total + confusion_counts(pred, gt)
    return compute_metrics(total)


def metrics_oracle(pred, gt) -> MetricsReport:
    """Per-pixel loop reference; shares no code with :func:`compute_metrics`."""
    pred = np.asarray(pred).tolist()
    gt = np.asarray(gt).tolist()
    tp = fp = fn = tn = 0
    for prow, grow in zip(pred, gt):
        for pv, gv in zip(prow, grow):
            if pv and gv:
                tp += 1
            elif pv:
                fp += 1
            elif gv:
                fn += 1
            else:
                tn += 1
    f1 = 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) > 0 else 1.0
    iou = tp / (tp + fp + fn) if (tp + fp + fn) > 0 else 1.0
    if tp + fp > 0:
        precision = tp / (tp + fp)
    else:
        precision = 1.0 if fn == 0 else 0.0
    if tp + fn > 0:
        recall = tp / (tp + fn)
    else:
        recall = 1.0 if fp == 0 else 0.0
    return MetricsReport(tp, fp, fn, tn, f1, iou, precision, recall)
