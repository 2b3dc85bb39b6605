"""Flat ``key = value`` configuration files and ``--set`` overrides."""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field

from .data import GenConfig
from .losses import LossWeights
from .params import ModelConfig


class UsageError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr: float = 5e-4
    lr_min: float = 0.0
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 30
    batch_size: int = 8
    lambda1: float = 0.8
    lambda2: float = 0.1
    lambda3: float = 0.1
    seed: int = 0
    data_dir: str = "data"
    out_dir: str = "runs/default"
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if not 1 <= self.epochs <= 300:
            raise UsageError(f"epochs must be in [1, 300], got {self.epochs}")
        if self.batch_size < 2:
            raise UsageError("batch_size must be >= 2 (batch-norm contract)")
        if self.lr <= 0 or self.weight_decay < 0 or self.adam_eps <= 0:
            raise UsageError("lr and adam_eps must be positive, weight_decay non-negative")
        self.model.seed = self.seed

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda1, self.lambda2, self.lambda3)


@dataclass
class DataConfig:
    n_pairs: int = 200
    seed: int = 0
    tile: int = 0
    train_ratio: float = 7.0
    val_ratio: float = 2.0
    test_ratio: float = 1.0
    data_dir: str = "data"
    gen: GenConfig = field(default_factory=GenConfig)

    def __post_init__(self):
        if self.n_pairs < 1:
            raise UsageError("n_pairs must be positive")
        if min(self.train_ratio, self.val_ratio, self.test_ratio) < 0:
            raise UsageError("split ratios must be non-negative")

    @property
    def ratios(self) -> tuple[float, float, float]:
        return (self.train_ratio, self.val_ratio, self.test_ratio)


def parse_flat(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def _convert(raw: str, hint):
    if hint is bool:
        low = raw.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise UsageError(f"not a boolean: {raw!r}")
        return low in ("true", "1", "yes")
    if hint is int:
        return int(raw)
    if hint is float:
        return float(raw)
    if typing.get_origin(hint) is tuple:
        inner = typing.get_args(hint)[0]
        return tuple(_convert(v.strip(), inner) for v in raw.split(",") if v.strip())
    return raw


def flat_keys(cls) -> list[str]:
    keys = []
    for f in dataclasses.fields(cls):
        if dataclasses.is_dataclass(typing.get_type_hints(cls)[f.name]):
            sub = typing.get_type_hints(cls)[f.name]
            keys += [k for k in flat_keys(sub) if k not in {g.name for g in dataclasses.fields(cls)}]
        else:
            keys.append(f.name)
    return keys


def apply_overrides(cls, base: dict, raw: dict[str, str]):
    """Build ``cls`` from defaults, ``base`` values and string ``raw`` overrides (nested flattened)."""
    valid = flat_keys(cls)
    unknown = sorted(set(raw) - set(valid))
    if unknown:
        raise UsageError(f"unknown config key(s) {', '.join(unknown)}; valid keys: {', '.join(valid)}")
    hints = typing.get_type_hints(cls)
    kwargs = dict(base)
    nested = {}
    for f in dataclasses.fields(cls):
        hint = hints[f.name]
        if dataclasses.is_dataclass(hint):
            sub_keys = set(flat_keys(hint)) - {g.name for g in dataclasses.fields(cls)}
            nested[f.name] = apply_overrides(hint, {}, {k: v for k, v in raw.items() if k in sub_keys})
        elif f.name in raw:
            try:
                kwargs[f.name] = _convert(raw[f.name], hint)
            except ValueError as exc:
                raise UsageError(f"bad value for {f.name}: {exc}") from None
    kwargs.update(nested)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def load_config(cls, path=None, sets=()):
    raw = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            raw.update(parse_flat(fh.read()))
    for item in sets:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        raw[key.strip()] = value.strip()
    return apply_overrides(cls, {}, raw)
