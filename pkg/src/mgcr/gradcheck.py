"""Central finite-difference checks against the tape's analytic gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    a = np.abs(analytic)
    n = np.abs(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(a, n), 1e-12)


def numeric_grad(fn: Callable[[], Tensor], target: Tensor, indices, h: float = 1e-5) -> np.ndarray:
    flat = target.data.reshape(-1)
    out = np.empty(len(indices))
    with no_grad():
        for n, i in enumerate(indices):
            orig = flat[i]
            # divide by the step actually representable around ``orig``
            hi, lo = orig + h, orig - h
            flat[i] = hi
            fp = fn().item()
            flat[i] = lo
            fm = fn().item()
            flat[i] = orig
            out[n] = (fp - fm) / (hi - lo)
    return out


def grad_check(builder: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5,
               tol: float | None = None) -> float:
    """Max relative error between backward() and central differences w.r.t. ``x``.

    ``builder`` maps the input tensor to a scalar. When ``tol`` is given the
    result is additionally asserted to be below it.
    """
    x.requires_grad = True
    x.grad = None
    builder(x).backward()
    analytic = x.grad.reshape(-1).copy()
    numeric = numeric_grad(lambda: builder(x), x, range(x.size), h)
    err = float(relative_error(analytic, numeric).max()) if x.size else 0.0
    if tol is not None and not err < tol:
        raise AssertionError(f"gradient check failed: max relative error {err:.3e} >= {tol:.1e}")
    return err


def grad_check_params(loss_fn: Callable[[], Tensor], params: dict[str, Tensor],
                      samples: Sequence[tuple[str, int]], h: float = 1e-5) -> tuple[float, list]:
    """Check a sampled set of (parameter name, flat index) entries of a whole-model loss."""
    for p in params.values():
        p.grad = None
    loss_fn().backward()
    rows = []
    for name, idx in samples:
        p = params[name]
        a = 0.0 if p.grad is None else float(p.grad.reshape(-1)[idx])
        n = float(numeric_grad(loss_fn, p, [idx], h)[0])
        rows.append((name, idx, a, n, float(relative_error(np.array(a), np.array(n)))))
    worst = max((r[-1] for r in rows), default=0.0)
    return worst, rows


def primitive_checks(seed: int = 0, h: float = 1e-5) -> list[tuple[str, float, float]]:
    """One probe-contracted check per primitive; rows are (name, error, tolerance)."""
    from . import tensor as T
    from .tensor import RunningStats

    rng = np.random.default_rng(seed)

    def rand(*shape):
        return rng.uniform(-2.0, 2.0, size=shape)

    def probe(fn, x):
        with no_grad():
            shape = fn(Tensor(x)).shape
        w = Tensor(rng.normal(size=shape))
        return lambda t: T.reduce_sum(T.mul(fn(t), w))

    w43, k233 = Tensor(rand(4, 3)), Tensor(rand(2, 3, 3))
    g, b = Tensor(rng.uniform(0.5, 1.5, 4)), Tensor(rand(4))
    stats = RunningStats(rand(4), rng.uniform(0.5, 2.0, 4), populated=True)
    kv = Tensor(rand(5, 4))
    ops = {
        "matmul": (lambda x: T.matmul(x, w43), rand(3, 4)),
        "softmax": (lambda x: T.softmax(x), rand(3, 4)),
        "layer_norm": (lambda x: T.layer_norm(x, g, b), rand(3, 4)),
        "batch_norm_train": (lambda x: T.batch_norm_1d(x, g, b, "train"), rand(5, 4)),
        "batch_norm_infer": (lambda x: T.batch_norm_1d(x, g, b, "infer", stats), rand(5, 4)),
        "conv1d": (lambda x: T.conv1d(x, k233), rand(3, 6)),
        "sigmoid": (T.sigmoid, rand(3, 4)),
        "relu": (T.relu, rand(3, 4)),
        "mul": (lambda x: T.mul(x, x), rand(3, 4)),
        "reduce_mean": (lambda x: T.reduce_mean(x, axis=0), rand(3, 4)),
        "embedding": (lambda t: T.embedding(t, [0, 2, 2]), rand(3, 4)),
        "attention": (lambda q: T.multi_head_attention(q, kv, kv, 2)[0], rand(3, 4)),
    }
    rows = []
    for name, (fn, x) in ops.items():
        rows.append((name, grad_check(probe(fn, x), Tensor(x), h), 1e-5))
    return rows


def model_check(seed: int = 0, h: float = 1e-5, n_params: int = 50) -> float:
    """Worst relative error of the full forward plus total loss over sampled scalar parameters."""
    from .fusion import forward, init_params
    from .losses import LossWeights, bce_loss, mse_loss, total_loss
    from .params import ModelConfig

    rng = np.random.default_rng(seed)
    cfg = ModelConfig(image_size=32, channels=(8, 8, 16, 16), d=16, heads=2, text_len=8,
                      vocab_size=12, ffn_mult=2, seed=seed)
    p = init_params(cfg)
    img1, img2 = rng.uniform(0, 1, (2, 32, 32, 3))
    target = (rng.random((32, 32)) < 0.3).astype(np.float64)
    t1, t2 = [2, 5, 6, 3, 0, 0, 0, 0], [2, 7, 3, 0, 0, 0, 0, 0]

    def loss():
        res = forward(img1, img2, t1, t2, p)
        return total_loss(bce_loss(res.change_map.prob, target),
                          mse_loss(res.embedded[0], res.fused_visual[0]),
                          mse_loss(res.embedded[1], res.fused_visual[1]), LossWeights())

    names = list(p.tensors)
    picks = rng.choice(len(names), size=min(n_params, len(names)), replace=False)
    samples = [(names[i], int(rng.integers(p[names[i]].size))) for i in picks]
    worst, _ = grad_check_params(loss, p.tensors, samples, h)
    return worst


def run_checks(seed: int = 0, h: float = 1e-5) -> list[tuple[str, float, float]]:
    return primitive_checks(seed, h) + [("full_model", model_check(seed, h), 1e-3)]
