"""Transformer fusion of the gated tokens and the absolute-difference change decoder."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .encoders import FeaturePyramid, encode_text, encode_visual, init_encoder_params
from .layers import block, dense, init_block
from .params import ModelConfig, ModelParams
from .sgcm import SgcmOutput, init_sgcm_params, sgcm_forward
from .tensor import ShapeError, Tensor


@dataclass
class FusedVL:
    tokens: Tensor
    visual_grid: Tensor
    text_part: Tensor
    n_visual: int

    @property
    def visual_tokens(self) -> Tensor:
        return self.tokens[: self.n_visual]


@dataclass
class ChangeMap:
    prob: Tensor
    threshold: float = 0.5

    @property
    def binary(self) -> np.ndarray:
        return self.prob.data > self.threshold


@dataclass
class ForwardResult:
    change_map: ChangeMap
    embedded: list[Tensor]  # per-branch visual embedding before the graph module
    fused_visual: list[Tensor]  # per-branch visual tokens after fusion
    sgcm: list[SgcmOutput] = field(default_factory=list)
    trace: dict = field(default_factory=dict)


def init_fusion_params(p: ModelParams) -> None:
    cfg = p.config
    for i in range(cfg.lvit_layers):
        init_block(p, f"lvit.block{i}", cfg.d, cfg.ffn_mult)
    for j in (2, 1, 0):
        p.linear(f"dec.skip{j}", cfg.channels[j], cfg.d)
        p.linear(f"dec.mix{j}", 2 * cfg.d, cfg.d)
    p.linear("dec.head", cfg.d, 1)


def init_params(config: ModelConfig) -> ModelParams:
    """All model weights, seeded from ``config.seed``; registration order is fixed."""
    p = ModelParams.empty(config)
    init_encoder_params(p)
    init_sgcm_params(p)
    init_fusion_params(p)
    return p


def lvit_fuse(x_gated: Tensor, t_gated: Tensor, p: ModelParams, trace: list | None = None) -> FusedVL:
    cfg = p.config
    if x_gated.shape[-1] != t_gated.shape[-1]:
        raise ShapeError(f"width mismatch {x_gated.shape} vs {t_gated.shape}")
    n_v = x_gated.shape[0]
    x = T.concat([x_gated, t_gated], axis=0)
    if cfg.use_lvit:
        for i in range(cfg.lvit_layers):
            x = block(p, f"lvit.block{i}", x, cfg.heads, trace=trace)
    side = int(round(np.sqrt(n_v)))
    visual = x[:n_v]
    return FusedVL(x, T.reshape(visual, (side, side, cfg.d)), x[n_v:], n_v)


def decode_change_map(fused_1: FusedVL, fused_2: FusedVL, pyr_1: FeaturePyramid,
                      pyr_2: FeaturePyramid, p: ModelParams) -> ChangeMap:
    if fused_1.visual_grid.shape != fused_2.visual_grid.shape or pyr_1.sides != pyr_2.sides:
        raise ShapeError("branch shapes differ")
    x = T.absolute(fused_1.visual_grid - fused_2.visual_grid)
    for j in (2, 1, 0):
        side = pyr_1.sides[j]
        x = T.upsample_nearest(x, 2)
        skip = dense(p, f"dec.skip{j}", T.absolute(pyr_1.stages[j] - pyr_2.stages[j]))
        skip = T.reshape(skip, (side, side, -1))
        x = T.relu(dense(p, f"dec.mix{j}", T.concat([x, skip], axis=-1)))
    # per-pixel linear commutes with nearest upsampling, so score the coarse grid first
    logits = T.upsample_nearest(dense(p, "dec.head", x), 4)
    prob = T.sigmoid(T.reshape(logits, logits.shape[:2]))
    return ChangeMap(prob, p.config.threshold)


def forward(image_1, image_2, tokens_1, tokens_2, p: ModelParams, mode: str = "train",
            keep_trace: bool = False) -> ForwardResult:
    """End-to-end pass over one bi-temporal pair; ``mode`` selects batch-norm statistics."""
    pyramids, fused, sgcm_out = [], [], []
    trace: dict = {}
    for image, tokens in ((image_1, tokens_1), (image_2, tokens_2)):
        image = image if isinstance(image, Tensor) else Tensor(image)
        branch_trace = {} if keep_trace else None
        pyr = encode_visual(image, p, branch_trace)
        txt = encode_text(tokens, p, branch_trace)
        out = sgcm_forward(pyr.stages[3], txt.tokens, p, mode)
        lvit_maps = [] if keep_trace else None
        fused.append(lvit_fuse(out.visual, out.text, p, lvit_maps))
        pyramids.append(pyr)
        sgcm_out.append(out)
        if keep_trace:
            branch_trace["lvit"] = lvit_maps
            trace[f"branch{len(pyramids)}"] = branch_trace
    cmap = decode_change_map(fused[0], fused[1], pyramids[0], pyramids[1], p)
    return ForwardResult(cmap, [o.embedded for o in sgcm_out],
                         [f.visual_tokens for f in fused], sgcm_out, trace)
