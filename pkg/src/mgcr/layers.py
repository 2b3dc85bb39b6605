"""Transformer building blocks shared by the encoders, the graph module and the fusion head."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .params import ModelParams
from .tensor import ConfigurationError, Tensor


def dense(p: ModelParams, name: str, x: Tensor) -> Tensor:
    bias = p.tensors.get(f"{name}.bias")
    return T.linear(x, p[f"{name}.weight"], bias)


def norm(p: ModelParams, name: str, x: Tensor) -> Tensor:
    return T.layer_norm(x, p[f"{name}.gamma"], p[f"{name}.beta"])


def init_attention(p: ModelParams, name: str, width: int, queries: tuple[str, ...] = ("q",)) -> None:
    # keys carry no bias: softmax is invariant to it
    for q in queries:
        p.linear(f"{name}.{q}", width, width)
    p.linear(f"{name}.k", width, width, bias=False)
    p.linear(f"{name}.v", width, width)
    p.linear(f"{name}.o", width, width)


def attention(p: ModelParams, name: str, queries: Tensor, context: Tensor, heads: int,
              key_mask: np.ndarray | None = None, q_name: str = "q",
              trace: list | None = None) -> Tensor:
    """Multi-head scaled dot-product attention of ``queries`` over ``context``.

    ``key_mask`` is a boolean vector over context rows, True where the key
    must be ignored. Per-head attention matrices are appended to ``trace``.
    """
    q = dense(p, f"{name}.{q_name}", queries)
    k = dense(p, f"{name}.k", context)
    v = dense(p, f"{name}.v", context)
    merged, weights = T.multi_head_attention(q, k, v, heads, key_mask)
    if trace is not None:
        trace.extend(weights)
    return dense(p, f"{name}.o", merged)


def init_block(p: ModelParams, name: str, width: int, ffn_mult: int) -> None:
    p.norm(f"{name}.ln1", width)
    init_attention(p, f"{name}.attn", width)
    p.norm(f"{name}.ln2", width)
    p.linear(f"{name}.ffn1", width, width * ffn_mult)
    p.linear(f"{name}.ffn2", width * ffn_mult, width)


def block(p: ModelParams, name: str, x: Tensor, heads: int, key_mask=None,
          trace: list | None = None) -> Tensor:
    """Pre-norm transformer encoder layer: self-attention then feed-forward, both residual."""
    h = norm(p, f"{name}.ln1", x)
    x = x + attention(p, f"{name}.attn", h, h, heads, key_mask=key_mask, trace=trace)
    h = norm(p, f"{name}.ln2", x)
    return x + dense(p, f"{name}.ffn2", T.relu(dense(p, f"{name}.ffn1", h)))


def sinusoidal_positions(length: int, width: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    rates = np.exp(-np.log(10000.0) * (np.arange(0, width, 2) / width))
    table = np.zeros((length, width))
    table[:, 0::2] = np.sin(pos * rates)
    table[:, 1::2] = np.cos(pos * rates[: width // 2])
    return table
