import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mgcr.losses import LossWeights, bce_loss, mse_loss, total_loss
from mgcr.metrics import (Counts, MetricsReport, compute_metrics, confusion_counts, metrics_oracle,
                          micro_average)
from mgcr.tensor import ShapeError, Tensor


# -------------------------------------------------------------------- loss


def test_bce_examples():
    y = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert bce_loss(Tensor(y), y).item() <= 1e-6
    assert bce_loss(Tensor(np.full((2, 2), 0.5)), y).item() == pytest.approx(math.log(2), abs=1e-12)
    with pytest.raises(ShapeError):
        bce_loss(Tensor(np.zeros(3)), np.zeros(4))


def test_bce_matches_loop():
    rng = np.random.default_rng(0)
    p, y = rng.uniform(0.01, 0.99, (6, 5)), (rng.random((6, 5)) < 0.5).astype(float)
    total = 0.0
    for pi, yi in zip(p.ravel(), y.ravel()):
        total += yi * math.log(pi) + (1 - yi) * math.log(1 - pi)
    assert bce_loss(Tensor(p), y).item() == pytest.approx(-total / p.size, rel=1e-12)


def test_bce_is_monotone_towards_target():
    ramp = np.linspace(0.05, 0.95, 10)
    for y, path in ((1.0, ramp), (0.0, ramp[::-1])):
        losses = [bce_loss(Tensor([[q]]), np.array([[y]])).item() for q in path]
        assert all(a > b for a, b in zip(losses, losses[1:]))


def test_mse_examples():
    a = Tensor(np.array([1.0, -2.0]))
    assert mse_loss(a, a).item() == 0.0
    assert mse_loss(Tensor([0.0, 2.0]), Tensor([0.0, 0.0])).item() == 2.0
    with pytest.raises(ShapeError):
        mse_loss(Tensor(np.zeros(2)), Tensor(np.zeros(3)))


def test_mse_matches_loop():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(4, 7)), rng.normal(size=(4, 7))
    total = sum((x - y) ** 2 for x, y in zip(a.ravel(), b.ravel()))
    assert mse_loss(Tensor(a), Tensor(b)).item() == pytest.approx(total / a.size, rel=1e-12)


def test_total_loss_examples():
    one, two = Tensor(1.0), Tensor(2.0)
    assert total_loss(one, two, two, LossWeights()).item() == pytest.approx(1.2, abs=1e-15)
    z = Tensor(0.0)
    assert total_loss(z, z, z, LossWeights()).item() == 0.0
    bce = Tensor(0.4321987)
    assert total_loss(bce, Tensor(3.0), Tensor(5.0), LossWeights(1, 0, 0)).item() == bce.item()
    with pytest.raises(ValueError):
        LossWeights(-0.1, 0.5, 0.5)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 50), st.floats(0, 50), st.floats(0, 50))
def test_total_loss_bce_only_is_bitwise(b, m1, m2):
    out = total_loss(Tensor(b), Tensor(m1), Tensor(m2), LossWeights(1.0, 0.0, 0.0)).item()
    assert out == b


# ----------------------------------------------------------------- metrics


def test_counts_examples():
    gt = np.array([[1, 0], [1, 1]], dtype=bool)
    assert confusion_counts(gt, gt) == Counts(3, 0, 0, 1)
    assert confusion_counts(np.zeros((3, 3), bool), np.ones((3, 3), bool)).fn == 9
    with pytest.raises(ShapeError):
        confusion_counts(np.zeros((2, 2)), np.zeros((2, 3)))


def test_metrics_examples():
    r = compute_metrics(Counts(3, 1, 1, 5))
    assert (r.f1, r.iou, r.precision, r.recall) == (0.75, 0.6, 0.75, 0.75)
    r = compute_metrics(Counts(4, 0, 0, 12))
    assert (r.f1, r.iou, r.precision, r.recall) == (1.0, 1.0, 1.0, 1.0)
    r = compute_metrics(Counts(0, 0, 0, 16))
    assert (r.f1, r.iou, r.precision, r.recall) == (1.0, 1.0, 1.0, 1.0)
    r = compute_metrics(Counts(0, 0, 2, 14))
    assert (r.precision, r.recall, r.f1) == (0.0, 0.0, 0.0)
    r = compute_metrics(Counts(0, 3, 0, 13))
    assert (r.precision, r.recall) == (0.0, 0.0)


def test_report_rendering_table_row():
    r = MetricsReport(0, 0, 0, 0, f1=0.9207, iou=0.8530, precision=0.9252, recall=0.9122)
    text = r.to_text()
    for line in ("F1 = 92.07", "IoU = 85.30", "Precision = 92.52", "Recall = 91.22"):
        assert line in text
    assert MetricsReport.from_dict(json.loads(r.to_json())) == r


def test_exhaustive_2x2_matches_oracle():
    cells = list(itertools.product([False, True], repeat=4))
    for p_bits, g_bits in itertools.product(cells, cells):
        pred, gt = np.array(p_bits).reshape(2, 2), np.array(g_bits).reshape(2, 2)
        assert compute_metrics(confusion_counts(pred, gt)) == metrics_oracle(pred, gt)


def test_random_16x16_match_oracle():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        density = rng.uniform(0, 0.3)
        pred, gt = rng.random((16, 16)) < density, rng.random((16, 16)) < density
        assert compute_metrics(confusion_counts(pred, gt)) == metrics_oracle(pred, gt)


def test_all_negative_pair_matches_oracle():
    z = np.zeros((4, 4), bool)
    assert compute_metrics(confusion_counts(z, z)) == metrics_oracle(z, z)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_metric_identities(tp, fp, fn, tn):
    r = compute_metrics(Counts(tp, fp, fn, tn))
    assert r.counts.total == tp + fp + fn + tn
    assert r.iou <= r.f1 + 1e-15
    if r.precision + r.recall > 0:
        assert abs(r.f1 - 2 * r.precision * r.recall / (r.precision + r.recall)) < 1e-12
    assert all(0.0 <= v <= 1.0 for v in (r.f1, r.iou, r.precision, r.recall))


def test_micro_average_pools_counts():
    a = (np.array([[1, 0]], bool), np.array([[1, 1]], bool))
    b = (np.array([[0, 0]], bool), np.array([[0, 0]], bool))
    r = micro_average([a, b])
    assert (r.tp, r.fp, r.fn, r.tn) == (1, 0, 1, 2)
    assert r.f1 == pytest.approx(2 / 3)
