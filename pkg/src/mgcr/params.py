"""Model configuration and the ordered parameter registry."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .tensor import ConfigurationError, RunningStats, Tensor


@dataclass
class ModelConfig:
    image_size: int = 64
    channels: tuple[int, ...] = (32, 64, 128, 256)
    d: int = 64
    heads: int = 4
    text_len: int = 16
    vocab_size: int = 64
    text_layers: int = 2
    lvit_layers: int = 2
    ffn_mult: int = 4
    conv_kernel: int = 3
    sgcm_vision: bool = True
    sgcm_language: bool = True
    use_lvit: bool = True
    threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.validate()

    def validate(self) -> None:
        if self.image_size % 32:
            raise ConfigurationError(f"image_size {self.image_size} is not divisible by 32")
        if len(self.channels) != 4:
            raise ConfigurationError("channels needs exactly four pyramid widths")
        for width in (self.d, *self.channels):
            if width % self.heads:
                raise ConfigurationError(f"heads={self.heads} does not divide width {width}")
        if self.conv_kernel % 2 == 0:
            raise ConfigurationError(f"conv_kernel must be odd, got {self.conv_kernel}")
        if self.text_len < 2:
            raise ConfigurationError("text_len must be at least 2")

    @property
    def visual_side(self) -> int:
        return self.image_size // 32

    @property
    def n_visual(self) -> int:
        return self.visual_side ** 2

    @property
    def n_nodes(self) -> int:
        return self.n_visual + self.text_len

    def to_text(self) -> str:
        """Canonical key-sorted ``key = value`` text."""
        lines = []
        for key, value in sorted(dataclasses.asdict(self).items()):
            lines.append(f"{key} = {format_value(value)}")
        return "\n".join(lines) + "\n"


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class ModelParams:
    """Learnable tensors and batch-norm buffers, both in registration order."""

    config: ModelConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)
    stats: dict[str, RunningStats] = field(default_factory=dict)
    rng: np.random.Generator | None = None

    @classmethod
    def empty(cls, config: ModelConfig) -> "ModelParams":
        return cls(config, rng=np.random.default_rng(config.seed))

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def _add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.tensors:
            raise KeyError(f"parameter {name!r} registered twice")
        t = Tensor(data, requires_grad=True)
        self.tensors[name] = t
        return t

    def uniform(self, name: str, shape, fan_in: int) -> Tensor:
        bound = 1.0 / np.sqrt(fan_in)
        return self._add(name, self.rng.uniform(-bound, bound, size=shape))

    def const(self, name: str, shape, value: float) -> Tensor:
        return self._add(name, np.full(shape, float(value)))

    def linear(self, name: str, n_in: int, n_out: int, bias: bool = True) -> None:
        self.uniform(f"{name}.weight", (n_in, n_out), n_in)
        if bias:
            self.uniform(f"{name}.bias", (n_out,), n_in)

    def norm(self, name: str, n: int) -> None:
        self.const(f"{name}.gamma", (n,), 1.0)
        self.const(f"{name}.beta", (n,), 0.0)

    def batch_norm(self, name: str, n: int) -> None:
        self.norm(name, n)
        self.stats[name] = RunningStats(np.zeros(n), np.ones(n))

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for name, st in self.stats.items():
            out[f"{name}.running_mean"] = st.mean
            out[f"{name}.running_var"] = st.var
            out[f"{name}.populated"] = np.array([1.0 if st.populated else 0.0])
        return out

    def registry(self) -> list[tuple[str, np.ndarray]]:
        """Every serialised array: parameters first, then buffers."""
        return [(k, t.data) for k, t in self.tensors.items()] + list(self.buffers().items())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def num_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())
