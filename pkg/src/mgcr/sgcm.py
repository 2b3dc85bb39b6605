"""Semantic graph-conditioned module: graph over vision-language nodes plus dual reconstruction.

Shapes for one temporal branch, with N = N_v + L_t nodes of width d:

    E    [N_v, d]   embedded deepest visual stage plus learned positions
    VL   [N, d]     visual rows first, then text rows
    z    [N, N]     LayerNorm(phi(VL)) @ LayerNorm(theta(VL))^T
    Z    [N, N]     BN(Conv1D(z^T))^T + z
    F'   [N, N]     BN(Conv1D([z | Z]^T))^T, channels 2N -> N
    VLT  [N, d]     ReLU(VL + Proj(F'))
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .layers import attention, dense, init_attention, norm
from .params import ModelParams
from .tensor import ShapeError, Tensor


@dataclass
class VLSequence:
    tokens: Tensor
    boundary: int


@dataclass
class SgcmOutput:
    visual: Tensor  # gated visual tokens [N_v, d]
    text: Tensor  # gated text tokens [L_t, d]
    embedded: Tensor  # E, before any reconstruction
    z: Tensor | None = None
    refined: Tensor | None = None
    vl_tokens: Tensor | None = None
    attention: dict = field(default_factory=dict)


def init_sgcm_params(p: ModelParams) -> None:
    cfg = p.config
    d, n, k = cfg.d, cfg.n_nodes, cfg.conv_kernel
    p.linear("sgcm.embed", cfg.channels[3], d)
    p.uniform("sgcm.pos", (cfg.n_visual, d), d)
    p.linear("sgcm.phi", d, d)
    p.linear("sgcm.theta", d, d)
    p.norm("sgcm.phi_norm", d)
    p.norm("sgcm.theta_norm", d)
    p.uniform("sgcm.graph_conv", (n, n, k), n * k)
    p.batch_norm("sgcm.graph_bn", n)
    p.uniform("sgcm.fuse_conv", (n, 2 * n, k), 2 * n * k)
    p.batch_norm("sgcm.fuse_bn", n)
    p.linear("sgcm.proj", n, d)
    init_attention(p, "sgcm.rec", d, queries=("q_img", "q_text"))


def embed_with_position(x3: Tensor, p: ModelParams) -> Tensor:
    """Deepest stage tokens [N_v, C3] (or an [s, s, C3] grid) -> [N_v, d] plus E_pos."""
    if x3.ndim == 3:
        x3 = T.reshape(x3, (-1, x3.shape[-1]))
    return dense(p, "sgcm.embed", x3) + p["sgcm.pos"]


def form_vl(embedded: Tensor, text: Tensor) -> VLSequence:
    if embedded.shape[-1] != text.shape[-1]:
        raise ShapeError(f"visual width {embedded.shape[-1]} != text width {text.shape[-1]}")
    return VLSequence(T.concat([embedded, text], axis=0), embedded.shape[0])


def build_adjacency(vl: VLSequence, p: ModelParams) -> Tensor:
    phi = norm(p, "sgcm.phi_norm", dense(p, "sgcm.phi", vl.tokens))
    theta = norm(p, "sgcm.theta_norm", dense(p, "sgcm.theta", vl.tokens))
    return T.matmul(phi, T.transpose(theta))


def _conv_bn(x: Tensor, p: ModelParams, conv: str, bn: str, mode: str) -> Tensor:
    """BN(Conv1D(x^T))^T for x laid out [positions, channels]."""
    y = T.conv1d(T.transpose(x), p[conv])
    # y is [C_out, L]; normalising its transpose per channel over L is BN on the conv output
    return T.batch_norm_1d(T.transpose(y), p[f"{bn}.gamma"], p[f"{bn}.beta"], mode, p.stats[bn])


def refine_graph(z: Tensor, p: ModelParams, mode: str = "train") -> Tensor:
    return _conv_bn(z, p, "sgcm.graph_conv", "sgcm.graph_bn", mode) + z


def fuse_graph_features(vl: VLSequence, z: Tensor, refined: Tensor, p: ModelParams,
                        mode: str = "train") -> Tensor:
    f = T.concat([z, refined], axis=1)
    f_prime = _conv_bn(f, p, "sgcm.fuse_conv", "sgcm.fuse_bn", mode)
    return T.relu(vl.tokens + dense(p, "sgcm.proj", f_prime))


def reconstruct(queries: Tensor, vl_tokens: Tensor, p: ModelParams, heads: int,
                q_name: str = "q_img", trace: list | None = None) -> Tensor:
    """Cross-attention with ``queries`` against the VL tokens as keys and values."""
    return attention(p, "sgcm.rec", queries, vl_tokens, heads, q_name=q_name, trace=trace)


def gate_residual(x: Tensor, r: Tensor) -> Tensor:
    if x.shape != r.shape:
        raise ShapeError(f"gate_residual shape mismatch: {x.shape} vs {r.shape}")
    return x + T.sigmoid(r)


def sgcm_forward(x3: Tensor, text: Tensor, p: ModelParams, mode: str = "train") -> SgcmOutput:
    """One temporal branch. Reconstruction gates follow the config's ablation switches."""
    cfg = p.config
    embedded = embed_with_position(x3, p)
    if not (cfg.sgcm_vision or cfg.sgcm_language):
        return SgcmOutput(embedded, text, embedded)
    vl = form_vl(embedded, text)
    z = build_adjacency(vl, p)
    refined = refine_graph(z, p, mode)
    tokens = fuse_graph_features(vl, z, refined, p, mode)
    out = SgcmOutput(embedded, text, embedded, z, refined, tokens)
    if cfg.sgcm_vision:
        maps = out.attention.setdefault("vr", [])
        vr = reconstruct(embedded, tokens, p, cfg.heads, "q_img", maps)
        out.visual = gate_residual(embedded, vr)
    if cfg.sgcm_language:
        maps = out.attention.setdefault("lr", [])
        lr = reconstruct(text, tokens, p, cfg.heads, "q_text", maps)
        out.text = gate_residual(text, lr)
    return out
