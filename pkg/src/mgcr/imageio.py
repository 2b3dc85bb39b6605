"""8-bit image files: binary PGM (P5) for masks and probability maps, PNG for RGB scenes."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


class ImageParseError(ValueError):
    pass


def to_byte(prob: np.ndarray) -> np.ndarray:
    """Probabilities in [0, 1] -> 0..255 with round-half-up."""
    return np.floor(np.clip(prob, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def normalize_to_byte(values: np.ndarray) -> np.ndarray:
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        return np.zeros(values.shape, dtype=np.uint8)
    return to_byte((values - lo) / (hi - lo))


def write_pgm(path, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim != 2:
        raise ValueError(f"PGM needs a 2-d array, got {pixels.shape}")
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    pos = 0
    fields = []

    def skip_space(pos):
        while pos < len(raw):
            if raw[pos:pos + 1] == b"#":
                while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif raw[pos:pos + 1].isspace():
                pos += 1
            else:
                break
        return pos

    while len(fields) < 4:
        pos = skip_space(pos)
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageParseError(f"{path}: truncated PGM header at byte {start}")
        fields.append((raw[start:pos], start))
    magic, (w, h, maxval) = fields[0], fields[1:]
    if magic[0] != b"P5":
        raise ImageParseError(f"{path}: bad magic {magic[0]!r} at byte 0, expected P5")
    try:
        width, height, mv = (int(v) for v, _ in (w, h, maxval))
    except ValueError:
        bad = next(off for v, off in (w, h, maxval) if not v.isdigit())
        raise ImageParseError(f"{path}: non-numeric header field at byte {bad}") from None
    if mv != 255:
        raise ImageParseError(f"{path}: maxval {mv} at byte {maxval[1]} unsupported, need 255")
    pos += 1  # single whitespace after maxval
    need = width * height
    if len(raw) - pos != need:
        raise ImageParseError(
            f"{path}: pixel data at byte {pos} holds {len(raw) - pos} bytes, expected {need}")
    return np.frombuffer(raw, dtype=np.uint8, offset=pos).reshape(height, width).copy()


def save_image(path, array) -> None:
    """Dispatch on suffix: ``.pgm`` takes a bool mask or [0, 1] probabilities, ``.png`` RGB floats."""
    path = Path(path)
    array = np.asarray(array)
    if path.suffix == ".pgm":
        if array.dtype == bool:
            write_pgm(path, array.astype(np.uint8) * 255)
        elif array.dtype == np.uint8:
            write_pgm(path, array)
        else:
            write_pgm(path, to_byte(array))
    elif path.suffix == ".png":
        if array.ndim != 3 or array.shape[2] != 3:
            raise ValueError(f"PNG output expects [H, W, 3], got {array.shape}")
        Image.fromarray(to_byte(array), mode="RGB").save(path)
    else:
        raise ValueError(f"unsupported image type {path.suffix!r}")


def load_image(path, as_mask: bool = False) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".pgm":
        pixels = read_pgm(path)
        if not as_mask:
            return pixels
        if not np.isin(pixels, (0, 255)).all():
            raise ImageParseError(f"{path}: mask pixels must be 0 or 255")
        return pixels == 255
    if path.suffix == ".png":
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    raise ValueError(f"unsupported image type {path.suffix!r}")
