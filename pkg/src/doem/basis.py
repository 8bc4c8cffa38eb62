"""Shared bit/basis-index/spin conversion, stated once.

A visible bit vector is read as a big-endian binary integer to get the
computational-basis index (first bit is most significant). Under the
standard Z Pauli matrix diag(1, -1), the basis vector at index ``k`` has
per-qubit Z eigenvalue ``+1`` where bit ``k`` is 0 and ``-1`` where it
is 1, i.e. ``s = 1 - 2*bit``. All clamping algebra, empirical densities,
and block enumeration in the package use exactly this mapping.
"""

from __future__ import annotations

import numpy as np


def basis_index(bits) -> int:
    """Big-endian basis index of a bit vector."""
    idx = 0
    for b in np.asarray(bits).ravel():
        idx = (idx << 1) | int(b)
    return idx


def index_bits(index: int, width: int) -> np.ndarray:
    """Big-endian bit vector of a basis index."""
    return np.array([(index >> (width - 1 - i)) & 1 for i in range(width)], dtype=np.uint8)


def sz_values(index: int, width: int) -> np.ndarray:
    """Per-qubit Z eigenvalues (+1/-1) of a basis index: s = 1 - 2*bit."""
    return 1.0 - 2.0 * index_bits(index, width).astype(np.float64)


def all_sz_values(width: int) -> np.ndarray:
    """Matrix (2**width, width) of Z eigenvalues for every basis index."""
    idx = np.arange(2**width)[:, None]
    shifts = width - 1 - np.arange(width)[None, :]
    bits = (idx >> shifts) & 1
    return 1.0 - 2.0 * bits.astype(np.float64)


def basis_indices_of_rows(rows: np.ndarray) -> np.ndarray:
    """Vectorized big-endian index of each row of a 0/1 matrix."""
    rows = np.asarray(rows, dtype=np.uint64)
    width = rows.shape[1]
    weights = (np.uint64(1) << np.arange(width - 1, -1, -1, dtype=np.uint64))
    return (rows * weights).sum(axis=1).astype(np.int64)
