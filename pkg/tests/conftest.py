import time
from contextlib import contextmanager

import numpy as np
import pytest

from mgcr.params import ModelConfig

ACCEPTANCE_LINES: dict[int, str] = {}


def dyadic(rng, shape, bits=4, lo=-2.0, hi=2.0):
    """Random multiples of 2**-bits: sums and products stay exact in float64."""
    steps = int((hi - lo) * 2**bits)
    return lo + rng.integers(0, steps + 1, size=shape) / 2**bits


@pytest.fixture
def toy_config():
    return ModelConfig(image_size=32, channels=(8, 8, 16, 16), d=16, heads=2, text_len=8,
                       vocab_size=12, ffn_mult=2, seed=3)


@contextmanager
def criterion(number: int, title: str):
    """Record one PASS/FAIL line for an acceptance criterion; the body may add to ``info['detail']``."""
    info = {"detail": ""}
    t0 = time.perf_counter()
    try:
        yield info
    except BaseException as exc:
        reason = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
        ACCEPTANCE_LINES[number] = f"FAIL  {number}. {title} ({time.perf_counter() - t0:.1f}s): {reason}"
        raise
    ACCEPTANCE_LINES[number] = f"PASS  {number}. {title} ({time.perf_counter() - t0:.1f}s) {info['detail']}".rstrip()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
