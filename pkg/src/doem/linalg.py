"""Dense complex linear algebra over finite-dimensional Hilbert spaces.

Operators are plain ``numpy`` complex128 arrays; density operators carry
their subsystem dimensions in a small wrapper class. Everything here is a
pure function of its inputs, so concurrent use is safe.

Conventions fixed once for the whole package:

* subsystem order is visible-first, so the hidden/latent factor is the
  LAST entry of ``dims`` and ``partial_trace(rho, -1)`` is the hot path;
* eigendecompositions are deterministic: ascending eigenvalues, each
  eigenvector's first significant component made real-positive, and
  degenerate clusters ordered lexicographically, so downstream outputs
  are reproducible bit-for-bit.
"""

from __future__ import annotations

from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import NumericError, ValidationError

# Eigenvalues below EPS_RANK_FACTOR * (largest magnitude) are treated as
# zero for all support/kernel decisions.
EPS_RANK_FACTOR = 1e-12

# Dense exact-path cap: 14 qubits, i.e. matrices up to 16384 x 16384.
MAX_EXACT_QUBITS = 14

TRACE_TOL = 1e-10
PSD_TOL = 1e-10
HERM_TOL_FACTOR = 1e-12


def as_complex(a) -> np.ndarray:
    arr = np.asarray(a, dtype=np.complex128)
    if arr.ndim != 2:
        raise ValidationError(f"expected a matrix, got shape {arr.shape}")
    return arr


def require_finite(a: np.ndarray, what: str = "matrix") -> np.ndarray:
    if not np.all(np.isfinite(a.view(np.float64) if a.dtype == np.complex128 else a)):
        raise NumericError(f"{what} contains NaN or Inf entries")
    return a


def require_hermitian(a, tol_factor: float = HERM_TOL_FACTOR) -> np.ndarray:
    """Validate that ``a`` equals its conjugate transpose within
    ``tol_factor * max|entry|`` and return it as complex128."""
    arr = as_complex(a)
    if arr.shape[0] != arr.shape[1]:
        raise ValidationError(f"hermitian operator must be square, got {arr.shape}")
    require_finite(arr, "hermitian operator")
    scale = max(np.abs(arr).max(), 1.0)
    dev = np.abs(arr - arr.conj().T).max()
    if dev > tol_factor * scale:
        raise ValidationError(
            f"matrix is not Hermitian: max |A - A^dag| = {dev:.3e} "
            f"exceeds {tol_factor:.1e} * {scale:.3e}"
        )
    return arr


def eps_rank(eigenvalues: np.ndarray) -> float:
    """Rank threshold relative to the largest eigenvalue magnitude."""
    top = float(np.abs(eigenvalues).max()) if eigenvalues.size else 0.0
    return EPS_RANK_FACTOR * max(top, 0.0)


class SpectralDecomposition(NamedTuple):
    """Eigensystem of a Hermitian operator.

    ``eigenvalues`` is real and ascending; ``eigenvectors`` holds the
    corresponding orthonormal columns in the deterministic convention
    described in the module docstring.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        u = self.eigenvectors
        return (u * self.eigenvalues) @ u.conj().T


def kron(a, b) -> np.ndarray:
    """Kronecker product; dimensions multiply."""
    return np.kron(as_complex(a), as_complex(b))


def direct_sum(blocks: Sequence[np.ndarray]) -> np.ndarray:
    """Block-diagonal matrix from square blocks; off-block entries are
    exactly zero."""
    if len(blocks) == 0:
        raise ValidationError("direct_sum requires at least one block")
    mats = [as_complex(b) for b in blocks]
    for m in mats:
        if m.shape[0] != m.shape[1]:
            raise ValidationError(f"direct_sum block is not square: {m.shape}")
    total = sum(m.shape[0] for m in mats)
    out = np.zeros((total, total), dtype=np.complex128)
    pos = 0
    for m in mats:
        d = m.shape[0]
        out[pos : pos + d, pos : pos + d] = m
        pos += d
    return out


def partial_trace_mat(mat: np.ndarray, dims: Sequence[int], subsystem: int) -> np.ndarray:
    """Trace out one subsystem of a matrix living on the tensor product
    of ``dims``-sized factors. Returns the reduced matrix."""
    dims = tuple(int(d) for d in dims)
    n = len(dims)
    if not -n <= subsystem < n:
        raise ValidationError(f"subsystem index {subsystem} invalid for dims {dims}")
    subsystem %= n
    total = int(np.prod(dims))
    mat = as_complex(mat)
    if mat.shape != (total, total):
        raise ValidationError(f"matrix shape {mat.shape} does not match dims {dims}")
    tensor = mat.reshape(dims + dims)
    reduced = np.trace(tensor, axis1=subsystem, axis2=n + subsystem)
    keep = int(np.prod([d for i, d in enumerate(dims) if i != subsystem]))
    return reduced.reshape(keep, keep)


def trace_product(a, b) -> complex:
    """Tr(a b) without forming the product: sum of a * b^T entrywise."""
    a = as_complex(a)
    b = as_complex(b)
    if a.shape[1] != b.shape[0] or a.shape[0] != b.shape[1]:
        raise ValidationError(f"trace_product dimension mismatch: {a.shape} vs {b.shape}")
    return complex(np.einsum("ij,ji->", a, b))


def _phase_normalize(vectors: np.ndarray) -> np.ndarray:
    """Rotate each column so its first significant component is real
    and positive."""
    out = vectors.copy()
    n, k = out.shape
    col_scale = np.abs(out).max(axis=0)
    for j in range(k):
        thresh = 1e-12 * max(col_scale[j], 1e-300)
        idx = np.argmax(np.abs(out[:, j]) > thresh)
        z = out[idx, j]
        mag = abs(z)
        if mag > 0.0:
            out[:, j] *= np.conj(z) / mag
    return out


def _column_key(col: np.ndarray) -> tuple:
    return tuple(np.stack([col.real, col.imag], axis=1).ravel())


def herm_eig(h, check: bool = True) -> SpectralDecomposition:
    """Full spectral decomposition of a Hermitian operator with the
    package's deterministic ordering and phase convention.

    Raises ``NumericError`` if the eigensolver fails to converge; the
    failure is never silently truncated.
    """
    mat = require_hermitian(h) if check else as_complex(h)
    try:
        w, v = np.linalg.eigh(mat)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigensolver failed to converge: {exc}") from exc
    v = _phase_normalize(v)
    # Reorder inside degenerate clusters for a deterministic tie-break.
    tie_tol = 1e-10 * max(1.0, float(np.abs(w).max()) if w.size else 1.0)
    start = 0
    while start < len(w):
        stop = start + 1
        while stop < len(w) and w[stop] - w[stop - 1] <= tie_tol:
            stop += 1
        if stop - start > 1:
            order = sorted(range(start, stop), key=lambda j: _column_key(v[:, j]))
            w[start:stop] = w[order]
            v[:, start:stop] = v[:, order]
        start = stop
    return SpectralDecomposition(w, v)


def mat_fn_hermitian(h, f: Callable[[np.ndarray], np.ndarray], check: bool = True) -> np.ndarray:
    """Apply a real scalar function to a Hermitian operator through its
    eigenvalues: U f(L) U^dag.

    ``f`` must be defined on every eigenvalue; a non-finite result is
    surfaced as ``NumericError`` (e.g. log of a zero eigenvalue).
    """
    w, u = herm_eig(h, check=check)
    with np.errstate(invalid="ignore", divide="ignore"):
        fw = np.asarray(f(w), dtype=np.float64)
    if not np.all(np.isfinite(fw)):
        bad = w[~np.isfinite(fw)]
        raise NumericError(f"scalar function undefined at eigenvalue(s) {bad}")
    return (u * fw) @ u.conj().T


def mat_exp(h, check: bool = True) -> np.ndarray:
    return mat_fn_hermitian(h, np.exp, check=check)


def mat_log(h, check: bool = True) -> np.ndarray:
    """Matrix logarithm; requires all eigenvalues above the rank
    threshold (the operator must be numerically full rank)."""
    w, u = herm_eig(h, check=check)
    if w.min() <= eps_rank(w):
        raise NumericError(
            f"matrix logarithm of a rank-deficient operator: min eigenvalue "
            f"{w.min():.3e} is below the rank threshold {eps_rank(w):.3e}"
        )
    return (u * np.log(w)) @ u.conj().T


def mat_sqrt(h, check: bool = True) -> np.ndarray:
    w, u = herm_eig(h, check=check)
    w = np.clip(w, 0.0, None)
    return (u * np.sqrt(w)) @ u.conj().T


def mat_inv_sqrt(h, check: bool = True) -> np.ndarray:
    w, u = herm_eig(h, check=check)
    if w.min() <= eps_rank(w):
        raise NumericError(
            "inverse square root of a rank-deficient operator "
            f"(min eigenvalue {w.min():.3e})"
        )
    return (u / np.sqrt(w)) @ u.conj().T


class DensityOperator:
    """Hermitian, positive-semidefinite, unit-trace matrix with explicit
    subsystem dimensions.

    ``dims`` is ordered visible-first; its product must equal the matrix
    dimension. Construction validates all invariants.
    """

    __slots__ = ("mat", "dims", "_eig")

    def __init__(self, mat, dims: Sequence[int] | int, validate: bool = True):
        mat = as_complex(mat)
        if isinstance(dims, (int, np.integer)):
            dims = (int(dims),)
        dims = tuple(int(d) for d in dims)
        if any(d < 1 for d in dims) or int(np.prod(dims)) != mat.shape[0]:
            raise ValidationError(
                f"subsystem dims {dims} do not multiply to matrix dimension {mat.shape[0]}"
            )
        if validate:
            mat = require_hermitian(mat)
            tr = np.trace(mat).real
            if abs(tr - 1.0) > TRACE_TOL:
                raise ValidationError(f"density operator trace {tr!r} deviates from 1")
            w = np.linalg.eigvalsh(mat)
            if w.min() < -PSD_TOL:
                raise ValidationError(
                    f"density operator has negative eigenvalue {w.min():.3e}"
                )
        self.mat = mat
        self.dims = dims
        self._eig: SpectralDecomposition | None = None

    def __repr__(self) -> str:
        return f"DensityOperator(dim={self.dim}, dims={self.dims})"

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    def eig(self) -> SpectralDecomposition:
        """Cached deterministic eigensystem."""
        if self._eig is None:
            self._eig = herm_eig(self.mat, check=False)
        return self._eig

    def is_full_rank(self) -> bool:
        w = self.eig().eigenvalues
        return bool(w.min() > eps_rank(w))


def partial_trace(rho: DensityOperator, subsystem: int) -> DensityOperator:
    """Marginalize out one subsystem of a density operator."""
    if len(rho.dims) < 2:
        raise ValidationError("partial_trace needs at least two subsystems")
    n = len(rho.dims)
    if not -n <= subsystem < n:
        raise ValidationError(f"subsystem index {subsystem} invalid for dims {rho.dims}")
    subsystem %= n
    reduced = partial_trace_mat(rho.mat, rho.dims, subsystem)
    reduced = 0.5 * (reduced + reduced.conj().T)
    new_dims = tuple(d for i, d in enumerate(rho.dims) if i != subsystem)
    return DensityOperator(reduced, new_dims)
