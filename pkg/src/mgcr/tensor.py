"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable primitive the model needs lives here. A result tensor
keeps a :class:`Node` recording the op name, its input tensors and a closure
mapping the output cotangent to input cotangents. Node ids come from a
monotonic counter, so sorting reachable nodes by id gives a topological order
and ``backward`` walks it in reverse.
"""
from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

LAYER_NORM_EPS = 1e-5
BATCH_NORM_EPS = 1e-5
BATCH_NORM_MOMENTUM = 0.1

_ids = itertools.count()
_state = threading.local()


class ShapeError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


@dataclass(eq=False)
class Node:
    op: str
    inputs: tuple["Tensor", ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "uid")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self.uid = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return index_select(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None) -> "Tensor":
        return reduce_sum(self, axis)

    def mean(self, axis=None) -> "Tensor":
        return reduce_mean(self, axis)

    def backward(self, grad: np.ndarray | None = None) -> None:
        backward(self, grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap ``data`` as the output of ``op``; ``backward_fn(g)`` returns one cotangent per input."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.uid = next(_ids)
    out.requires_grad = grad_enabled() and any(t.requires_grad for t in inputs)
    out.node = Node(op, tuple(inputs), backward_fn) if out.requires_grad else None
    return out


def topological_order(root: Tensor) -> list[Tensor]:
    """All tensors reachable from ``root`` that take part in differentiation, creation order."""
    seen: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        t = stack.pop()
        if t.uid in seen or not t.requires_grad:
            continue
        seen[t.uid] = t
        if t.node is not None:
            stack.extend(t.node.inputs)
    return [seen[k] for k in sorted(seen)]


def backward(loss: Tensor, grad: np.ndarray | None = None) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable tensor requiring grad."""
    if grad is None:
        if loss.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    if not loss.requires_grad:
        return
    pending: dict[int, np.ndarray] = {loss.uid: np.asarray(grad, dtype=np.float64)}
    for t in reversed(topological_order(loss)):
        g = pending.pop(t.uid, None)
        if g is None:
            continue
        if t.node is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        # interior cotangents are never mutated in place, so no copy is needed
        t.grad = g if t.grad is None else t.grad + g
        for inp, ig in zip(t.node.inputs, t.node.backward(g)):
            if ig is None or not inp.requires_grad:
                continue
            prev = pending.get(inp.uid)
            pending[inp.uid] = ig if prev is None else prev + ig


# ----------------------------------------------------------------- elementwise


def _check_broadcast(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    small, big = (a, b) if a.size <= b.size else (b, a)
    trimmed = small.shape
    while trimmed and trimmed[0] == 1 and len(trimmed) > 1:
        trimmed = trimmed[1:]
    if len(trimmed) <= big.ndim and big.shape[big.ndim - len(trimmed):] == trimmed:
        return
    raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.data, b.data)
    sa, sb = a.shape, b.shape
    return make_op("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.data, b.data)
    sa, sb = a.shape, b.shape
    return make_op("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.data, b.data)
    ad, bd = a.data, b.data
    return make_op("mul", ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return make_op("scale", a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make_op("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return make_op("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return make_op("abs", np.abs(a.data), (a,), lambda g: (g * sign,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return make_op("log", np.log(x), (a,), lambda g: (g / x,))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return make_op("clamp", np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def elementwise(kind: str, a: Tensor, b=None) -> Tensor:
    """Dispatch by name: add, sub, mul, scale, relu, sigmoid, abs."""
    binary = {"add": add, "sub": sub, "mul": mul}
    if kind in binary:
        if b is None:
            raise ValueError(f"{kind} needs a second operand")
        return binary[kind](a, b)
    if kind == "scale":
        return scale(a, b)
    unary = {"relu": relu, "sigmoid": sigmoid, "abs": absolute}
    if kind not in unary:
        raise ValueError(f"unknown elementwise kind {kind!r}")
    return unary[kind](a)


# -------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    need_a, need_b = a.requires_grad, b.requires_grad
    return make_op("matmul", ad @ bd, (a, b),
                   lambda g: (g @ bd.T if need_a else None, ad.T @ g if need_b else None))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` over the last axis; ``weight`` is [in, out]."""
    lead = x.shape[:-1]
    flat = x if x.ndim == 2 else reshape(x, (-1, x.shape[-1]))
    out = matmul(flat, weight)
    if bias is not None:
        out = add(out, bias)
    return out if x.ndim == 2 else reshape(out, lead + (weight.shape[1],))


# ----------------------------------------------------------------- reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for {ndim}-d tensor")
        out.append(ax % ndim)
    return tuple(out)


def reduce_sum(a: Tensor, axis=None) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    shape = a.shape
    out = a.data.sum(axis=axes)

    def bw(g):
        if axes is not None:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return make_op("sum", np.asarray(out, dtype=np.float64), (a,), bw)


def reduce_mean(a: Tensor, axis=None) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    count = a.size if axes is None else int(np.prod([a.shape[ax] for ax in axes]))
    return scale(reduce_sum(a, axes), 1.0 / count)


def reduce(kind: str, a: Tensor, axis=None) -> Tensor:
    if kind == "sum":
        return reduce_sum(a, axis)
    if kind == "mean":
        return reduce_mean(a, axis)
    raise ValueError(f"unknown reduction {kind!r}")


# ------------------------------------------------------------------- shaping


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return make_op("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        if a.ndim != 2:
            raise ShapeError(f"transpose without axes needs a 2-d tensor, got {a.shape}")
        axes = (1, 0)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_op("transpose", np.ascontiguousarray(a.data.transpose(axes)), (a,),
                   lambda g: (g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            t.shape[i] != ref[i] for i in range(len(ref)) if i != ax
        ):
            raise ShapeError(f"concat off-axis mismatch: {ref} vs {t.shape} along axis {axis}")
    cuts = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    return make_op("concat", np.concatenate([t.data for t in tensors], axis=ax), tensors,
                   lambda g: tuple(np.split(g, cuts, axis=ax)))


def index_select(a: Tensor, index) -> Tensor:
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return make_op("index", np.array(a.data[index]), (a,), bw)


def embedding(table: Tensor, ids: Sequence[int]) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise IndexError(f"token id out of range for vocabulary of size {vocab}: {ids.tolist()}")
    shape = table.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, ids, g)
        return (out,)

    return make_op("embedding", table.data[ids], (table,), bw)


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Nearest-neighbour upsampling of an [h, w, c] grid by an integer factor."""
    h, w, c = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=0), factor, axis=1)
    return make_op("upsample", out, (x,),
                   lambda g: (g.reshape(h, factor, w, factor, c).sum(axis=(1, 3)),))


# ------------------------------------------------------------- normalisation


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax with max-shift; ``mask`` (broadcastable, True = drop) sets scores to -inf."""
    d = x.data
    if mask is not None:
        d = np.where(mask, -np.inf, d)
    shifted = d - d.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_op("softmax", y, (x,), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    n = x.shape[-1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} for last axis {n}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gamma.data

    def bw(g):
        gx = g * gd
        dx = rstd * (gx - gx.mean(axis=-1, keepdims=True)
                     - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return make_op("layer_norm", xhat * gd + beta.data, (x, gamma, beta), bw)


@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray
    populated: bool = False


def batch_norm_1d(x: Tensor, gamma: Tensor, beta: Tensor, mode: str,
                  stats: RunningStats | None = None, eps: float = BATCH_NORM_EPS,
                  momentum: float = BATCH_NORM_MOMENTUM) -> Tensor:
    """Per-channel normalisation of a [batch, C] tensor.

    ``train`` normalises with the batch statistics and folds them into
    ``stats`` (unbiased variance, momentum 0.1); ``infer`` reads ``stats``.
    """
    if x.ndim != 2:
        raise ShapeError(f"batch_norm_1d expects [batch, C], got {x.shape}")
    batch, c = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm affine shapes {gamma.shape}/{beta.shape} for {c} channels")
    xd = x.data
    gd = gamma.data
    if mode == "train":
        if batch < 2:
            raise ConfigurationError("batch_norm_1d in train mode needs batch >= 2")
        mu = xd.mean(axis=0)
        xc = xd - mu
        var = (xc * xc).mean(axis=0)
        if stats is not None:
            stats.mean[...] = (1 - momentum) * stats.mean + momentum * mu
            stats.var[...] = (1 - momentum) * stats.var + momentum * var * batch / (batch - 1)
            stats.populated = True
        rstd = 1.0 / np.sqrt(var + eps)
        xhat = xc * rstd

        def bw(g):
            gx = g * gd
            dx = rstd * (gx - gx.mean(axis=0) - xhat * (gx * xhat).mean(axis=0))
            return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    elif mode == "infer":
        if stats is None or not stats.populated:
            raise ConfigurationError("batch_norm_1d infer mode needs populated running stats")
        rstd = 1.0 / np.sqrt(stats.var + eps)
        xhat = (xd - stats.mean) * rstd

        def bw(g):
            return g * gd * rstd, (g * xhat).sum(axis=0), g.sum(axis=0)

    else:
        raise ValueError(f"unknown batch-norm mode {mode!r}")
    return make_op("batch_norm", xhat * gd + beta.data, (x, gamma, beta), bw)


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, heads: int,
                         key_mask: np.ndarray | None = None) -> tuple[Tensor, np.ndarray]:
    """softmax(Q_h K_h^T / sqrt(d_h)) V_h for every head, heads concatenated on the last axis.

    One tape node for all heads. Returns the output and the [heads, M, N]
    attention weights. ``key_mask`` (length N, True = ignore) zeroes keys.
    """
    m, width = q.shape
    n = k.shape[0]
    if width % heads:
        raise ConfigurationError(f"heads={heads} does not divide width {width}")
    if k.shape != (n, width) or v.shape != (n, width):
        raise ShapeError(f"attention shapes q{q.shape} k{k.shape} v{v.shape}")
    dh = width // heads
    c = 1.0 / np.sqrt(dh)
    qh = q.data.reshape(m, heads, dh).transpose(1, 0, 2)
    kh = k.data.reshape(n, heads, dh).transpose(1, 0, 2)
    vh = v.data.reshape(n, heads, dh).transpose(1, 0, 2)
    scores = (qh @ kh.transpose(0, 2, 1)) * c
    if key_mask is not None:
        scores = np.where(np.asarray(key_mask, dtype=bool)[None, None, :], -np.inf, scores)
    e = np.exp(scores - scores.max(axis=-1, keepdims=True))
    a = e / e.sum(axis=-1, keepdims=True)
    out = (a @ vh).transpose(1, 0, 2).reshape(m, width)

    def bw(g):
        gh = g.reshape(m, heads, dh).transpose(1, 0, 2)
        da = gh @ vh.transpose(0, 2, 1)
        ds = a * (da - (da * a).sum(axis=-1, keepdims=True)) * c
        dq = (ds @ kh).transpose(1, 0, 2).reshape(m, width)
        dk = (ds.transpose(0, 2, 1) @ qh).transpose(1, 0, 2).reshape(n, width)
        dv = (a.transpose(0, 2, 1) @ gh).transpose(1, 0, 2).reshape(n, width)
        return dq, dk, dv

    return make_op("attention", out, (q, k, v), bw), a


# --------------------------------------------------------------- convolution


def conv1d(x: Tensor, kernel: Tensor, padding: int | None = None) -> Tensor:
    """Cross-correlation of [C_in, L] with [C_out, C_in, k], zero padded to keep L."""
    c_out, c_in, k = kernel.shape
    if k % 2 == 0:
        raise ConfigurationError(f"conv1d kernel size must be odd to preserve length, got {k}")
    if padding is None:
        padding = (k - 1) // 2
    if padding != (k - 1) // 2:
        raise ConfigurationError(f"padding {padding} does not preserve length for kernel {k}")
    if x.ndim != 2 or x.shape[0] != c_in:
        raise ShapeError(f"conv1d input {x.shape} does not match kernel {kernel.shape}")
    length = x.shape[1]
    xp = np.pad(x.data, ((0, 0), (padding, padding)))
    # cols[c*k + j, t] = xp[c, t + j]
    cols = np.stack([xp[:, j:j + length] for j in range(k)], axis=1).reshape(c_in * k, length)
    w2 = kernel.data.reshape(c_out, c_in * k)

    def bw(g):
        dcols = (w2.T @ g).reshape(c_in, k, length)
        dxp = np.zeros_like(xp)
        for j in range(k):
            dxp[:, j:j + length] += dcols[:, j, :]
        return dxp[:, padding:padding + length], (g @ cols.T).reshape(kernel.shape)

    return make_op("conv1d", w2 @ cols, (x, kernel), bw)


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
