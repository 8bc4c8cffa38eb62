"""Counter-based deterministic random streams.

Every consumer of randomness derives its own Philox stream from
``(seed, purpose, coordinates)``, so parallel execution over rows or
chains is bit-identical to sequential execution and any draw can be
replayed in isolation.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

_PURPOSE_INIT = 1
_PURPOSE_SHUFFLE = 2
_PURPOSE_ROW = 3
_PURPOSE_CHAIN = 4

_MASK16 = (1 << 16) - 1
_MASK32 = (1 << 32) - 1


def _stream(seed: int, purpose: int, a: int = 0, b: int = 0, c: int = 0) -> np.random.Generator:
    if not (0 <= a <= _MASK16 and 0 <= b <= _MASK16 and 0 <= c <= _MASK32):
        raise ValidationError(f"stream coordinates out of range: {(a, b, c)}")
    word = (purpose << 56) | (a << 48) | (b << 32) | c
    key = np.array([np.uint64(seed & (2**64 - 1)), np.uint64(word)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def init_stream(seed: int) -> np.random.Generator:
    """Stream for parameter initialization."""
    return _stream(seed, _PURPOSE_INIT)


def shuffle_stream(seed: int, epoch: int) -> np.random.Generator:
    """Stream for the per-epoch minibatch shuffle."""
    return _stream(seed, _PURPOSE_SHUFFLE, a=epoch)


def row_stream(seed: int, epoch: int, batch: int, row: int) -> np.random.Generator:
    """Stream for one row of one minibatch of one epoch."""
    return _stream(seed, _PURPOSE_ROW, a=epoch, b=batch, c=row)


def row_streams(seed: int, epoch: int, batch: int, n_rows: int) -> list[np.random.Generator]:
    return [row_stream(seed, epoch, batch, r) for r in range(n_rows)]


def chain_stream(seed: int, chain: int) -> np.random.Generator:
    """Stream for one sampling chain."""
    return _stream(seed, _PURPOSE_CHAIN, c=chain)
