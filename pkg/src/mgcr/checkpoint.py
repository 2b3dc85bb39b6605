"""Binary checkpoint format.

    MGCR1\\n
    config_sha256 <hex>\\n
    config_bytes <n>\\n
    <n bytes of canonical key-sorted config text>
    epoch <e>\\n
    entries <count>\\n
    then per entry: "<name> <d0>x<d1>...\\n" followed by little-endian float64 data
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .params import ModelConfig, ModelParams

MAGIC = b"MGCR1\n"


class IncompatibleCheckpoint(ValueError):
    pass


class CorruptCheckpoint(ValueError):
    pass


@dataclass
class CheckpointState:
    config_text: str
    epoch: int
    arrays: dict[str, np.ndarray]


def encode(params: ModelParams, epoch: int) -> bytes:
    text = params.config.to_text().encode("utf-8")
    head = [MAGIC,
            f"config_sha256 {hashlib.sha256(text).hexdigest()}\n".encode(),
            f"config_bytes {len(text)}\n".encode(), text,
            f"epoch {epoch}\n".encode()]
    reg = params.registry()
    head.append(f"entries {len(reg)}\n".encode())
    for name, arr in reg:
        dims = "x".join(str(n) for n in arr.shape) or "scalar"
        head.append(f"{name} {dims}\n".encode())
        head.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(head)


def save_checkpoint(path, params: ModelParams, epoch: int) -> None:
    Path(path).write_bytes(encode(params, epoch))


def _line(raw: bytes, pos: int) -> tuple[str, int]:
    end = raw.find(b"\n", pos)
    if end < 0:
        raise CorruptCheckpoint(f"truncated checkpoint at byte {pos}")
    return raw[pos:end].decode("utf-8"), end + 1


def read_checkpoint(path) -> CheckpointState:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise IncompatibleCheckpoint(f"{path}: not an MGCR1 checkpoint")
    pos = len(MAGIC)
    line, pos = _line(raw, pos)
    digest = line.split(" ", 1)[1]
    line, pos = _line(raw, pos)
    n = int(line.split(" ", 1)[1])
    text = raw[pos:pos + n]
    if len(text) != n:
        raise CorruptCheckpoint(f"{path}: truncated config block")
    if hashlib.sha256(text).hexdigest() != digest:
        raise IncompatibleCheckpoint(f"{path}: config hash mismatch")
    pos += n
    line, pos = _line(raw, pos)
    epoch = int(line.split(" ", 1)[1])
    line, pos = _line(raw, pos)
    count = int(line.split(" ", 1)[1])
    arrays = {}
    for _ in range(count):
        line, pos = _line(raw, pos)
        name, dims = line.rsplit(" ", 1)
        shape = () if dims == "scalar" else tuple(int(v) for v in dims.split("x"))
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(raw):
            raise CorruptCheckpoint(f"{path}: entry {name} truncated at byte {pos}")
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=nbytes // 8, offset=pos).reshape(shape).copy()
        pos += nbytes
    if pos != len(raw):
        raise CorruptCheckpoint(f"{path}: {len(raw) - pos} trailing bytes")
    return CheckpointState(text.decode("utf-8"), epoch, arrays)


def parse_config_text(text: str) -> ModelConfig:
    from .config import parse_flat, apply_overrides  # local: config imports params

    return apply_overrides(ModelConfig, {}, parse_flat(text))


def load_checkpoint(path, expected: ModelConfig | None = None) -> tuple[ModelParams, int]:
    """Rebuild parameters; raises when ``expected`` hashes differently from the stored config."""
    from .fusion import init_params

    state = read_checkpoint(path)
    if expected is not None and expected.to_text() != state.config_text:
        raise IncompatibleCheckpoint(f"{path}: checkpoint config differs from the expected one")
    config = parse_config_text(state.config_text)
    params = init_params(config)
    reg = params.registry()
    if [k for k, _ in reg] != list(state.arrays):
        raise IncompatibleCheckpoint(f"{path}: parameter registry does not match the config")
    for name, arr in reg:
        if arr.shape != state.arrays[name].shape:
            raise IncompatibleCheckpoint(f"{path}: {name} has shape {state.arrays[name].shape}")
        arr[...] = state.arrays[name]
    for name, st in params.stats.items():
        st.populated = bool(state.arrays[f"{name}.populated"][0])
    return params, state.epoch
