"""Siamese pyramid image encoder and transformer caption encoder.

Both temporal branches call the same functions with the same
:class:`ModelParams`, so their weights are shared by construction.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import block, dense, init_block, norm, sinusoidal_positions
from .params import ModelConfig, ModelParams
from .tensor import ConfigurationError, Tensor
from .text import PAD

PATCH = 4


@dataclass
class FeaturePyramid:
    """Four stages of row-major tokens; ``stages[j]`` is [side_j**2, C_j]."""

    stages: list[Tensor]
    sides: list[int]

    def grid(self, j: int) -> Tensor:
        s = self.sides[j]
        return T.reshape(self.stages[j], (s, s, self.stages[j].shape[-1]))


@dataclass
class TextFeatures:
    tokens: Tensor
    pad_mask: np.ndarray


def init_encoder_params(p: ModelParams) -> None:
    cfg = p.config
    c = cfg.channels
    p.linear("vis.embed", PATCH * PATCH * 3, c[0])
    p.norm("vis.embed_norm", c[0])
    for j in range(1, 4):
        p.linear(f"vis.merge{j}", 4 * c[j - 1], c[j])
        init_block(p, f"vis.stage{j}", c[j], cfg.ffn_mult)
    p.uniform("txt.embed", (cfg.vocab_size, cfg.d), 1)
    for i in range(cfg.text_layers):
        init_block(p, f"txt.block{i}", cfg.d, cfg.ffn_mult)
    p.norm("txt.final_norm", cfg.d)


def _space_to_depth(x: Tensor, side: int, factor: int) -> Tensor:
    """[side*side*?] grid -> [(side/f)**2, f*f*C] with each f x f neighbourhood flattened."""
    c = x.shape[-1]
    out = side // factor
    g = T.reshape(x, (out, factor, out, factor, c))
    g = T.transpose(g, (0, 2, 1, 3, 4))
    return T.reshape(g, (out * out, factor * factor * c))


def encode_visual(image: Tensor, p: ModelParams, trace: dict | None = None) -> FeaturePyramid:
    """Image [H, W, 3] -> pyramid with spatial sides H/4, H/8, H/16, H/32."""
    cfg = p.config
    h, w = image.shape[:2]
    if h % 32 or w % 32:
        raise ConfigurationError(f"image sides must be divisible by 32, got {h}x{w}")
    if h != w:
        raise ConfigurationError(f"square images only, got {h}x{w}")
    side = h // PATCH
    x = _space_to_depth(image, h, PATCH)
    x = norm(p, "vis.embed_norm", dense(p, "vis.embed", x))
    stages, sides = [x], [side]
    for j in range(1, 4):
        x = dense(p, f"vis.merge{j}", _space_to_depth(x, side, 2))
        side //= 2
        maps = None if trace is None else trace.setdefault(f"vis.stage{j}", [])
        x = block(p, f"vis.stage{j}", x, cfg.heads, trace=maps)
        stages.append(x)
        sides.append(side)
    return FeaturePyramid(stages, sides)


def encode_text(token_ids, p: ModelParams, trace: dict | None = None) -> TextFeatures:
    cfg = p.config
    ids = np.asarray(token_ids, dtype=np.int64)
    x = T.embedding(p["txt.embed"], ids)
    x = x + sinusoidal_positions(len(ids), cfg.d)
    pad = ids == PAD
    for i in range(cfg.text_layers):
        maps = None if trace is None else trace.setdefault(f"txt.block{i}", [])
        x = block(p, f"txt.block{i}", x, cfg.heads, key_mask=pad, trace=maps)
    return TextFeatures(norm(p, "txt.final_norm", x), pad)
