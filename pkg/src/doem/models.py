"""Model definitions: parameterized Hamiltonians, Gibbs states, the
transverse-field machine over visible and hidden qubits, and its
block-diagonal (classical-visible) form.

Sign conventions, fixed package-wide:

* the model state is ``exp(+H(theta)) / Z`` -- the machine's negative
  signs live inside the Hamiltonian terms;
* ``H(theta) = sum_r theta_r H_r`` with the parameter vector packed as
  ``(biases, couplings for site pairs i > j in lower-triangle order,
  transverse biases)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .basis import all_sz_values
from .errors import NumericError, ValidationError
from .linalg import (
    MAX_EXACT_QUBITS,
    DensityOperator,
    eps_rank,
    herm_eig,
    partial_trace,
    require_hermitian,
)

PAULI_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=np.complex128)
PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=np.complex128)
_PAULI = {"z": PAULI_Z, "x": PAULI_X}

SPEC_FORMAT_VERSION = 1


def pauli_term(total_qubits: int, site: int, axis: str) -> np.ndarray:
    """Single-site Pauli operator embedded in ``total_qubits`` qubits;
    ``site`` is 1-based."""
    if axis not in _PAULI:
        raise ValidationError(f"axis must be 'z' or 'x', got {axis!r}")
    if not 1 <= site <= total_qubits:
        raise ValidationError(f"site {site} out of range 1..{total_qubits}")
    op = np.array([[1.0 + 0j]])
    for q in range(1, total_qubits + 1):
        op = np.kron(op, _PAULI[axis] if q == site else np.eye(2))
    return op


@dataclass(eq=False)
class ParamHamiltonian:
    """Hermitian operator linear in its parameters: H = sum_r theta_r H_r.

    ``dims`` optionally records a visible/latent tensor split for the
    resulting Gibbs state.
    """

    dim: int
    terms: list[np.ndarray]
    theta: np.ndarray
    dims: tuple[int, ...] | None = None

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if len(self.terms) != self.theta.size:
            raise ValidationError(
                f"term count {len(self.terms)} does not match parameter count {self.theta.size}"
            )
        for t in self.terms:
            if t.shape != (self.dim, self.dim):
                raise ValidationError(f"term shape {t.shape} does not match dim {self.dim}")

    def matrix(self, theta: np.ndarray | None = None) -> np.ndarray:
        th = self.theta if theta is None else np.asarray(theta, dtype=np.float64)
        out = np.zeros((self.dim, self.dim), dtype=np.complex128)
        for coeff, term in zip(th, self.terms):
            if coeff != 0.0:
                out += coeff * term
        return out


@dataclass(eq=False)
class QbmSpec:
    """Transverse-field machine over ``m`` visible and ``n`` hidden
    qubits: Z biases ``b``, symmetric ZZ couplings ``w`` (only pairs
    i > j enter the Hamiltonian), and transverse X biases ``gamma``.

    The model has a classical visible distribution (block-diagonal
    joint state) exactly when every visible transverse bias is zero.
    """

    m: int
    n: int
    b: np.ndarray
    w: np.ndarray
    gamma: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        total = self.m + self.n
        if self.m < 1 or self.n < 0:
            raise ValidationError(f"need m >= 1 visible and n >= 0 hidden, got {self.m},{self.n}")
        self.b = np.asarray(self.b, dtype=np.float64).reshape(total)
        self.gamma = np.asarray(self.gamma, dtype=np.float64).reshape(total)
        self.w = np.asarray(self.w, dtype=np.float64).reshape(total, total)
        if np.abs(self.w - self.w.T).max() > 0.0:
            raise ValidationError("coupling table must be symmetric")
        if np.abs(np.diag(self.w)).max() > 0.0:
            raise ValidationError("coupling table must have zero diagonal")
        if not (np.all(np.isfinite(self.b)) and np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.gamma))):
            raise ValidationError("model parameters must be finite")

    @property
    def total_qubits(self) -> int:
        return self.m + self.n

    def is_cqlvm(self) -> bool:
        return bool(np.all(self.gamma[: self.m] == 0.0))

    # -- parameter vector packing (shared by dense and block paths) --

    def coupling_pairs(self) -> list[tuple[int, int]]:
        """0-based site pairs (i, j) with i > j, lower-triangle order."""
        return [(i, j) for i in range(1, self.total_qubits) for j in range(i)]

    def theta(self) -> np.ndarray:
        pairs = self.coupling_pairs()
        return np.concatenate(
            [self.b, np.array([self.w[i, j] for i, j in pairs]), self.gamma]
        )

    def with_theta(self, theta: np.ndarray) -> "QbmSpec":
        total = self.total_qubits
        theta = np.asarray(theta, dtype=np.float64)
        pairs = self.coupling_pairs()
        if theta.size != 2 * total + len(pairs):
            raise ValidationError(f"theta length {theta.size} does not match spec")
        b = theta[:total].copy()
        w = np.zeros((total, total))
        for k, (i, j) in enumerate(pairs):
            w[i, j] = w[j, i] = theta[total + k]
        gamma = theta[total + len(pairs):].copy()
        return QbmSpec(self.m, self.n, b, w, gamma, seed=self.seed)

    # -- versioned text serialization, bit-exact round-trip --

    def to_json(self) -> str:
        doc = {
            "format": "qbm-spec",
            "version": SPEC_FORMAT_VERSION,
            "m": self.m,
            "n": self.n,
            "b": self.b.tolist(),
            "w": self.w.tolist(),
            "gamma": self.gamma.tolist(),
            "seed": self.seed,
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "QbmSpec":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"malformed model spec document: {exc}") from exc
        if doc.get("format") != "qbm-spec":
            raise ValidationError(f"not a model spec document: format={doc.get('format')!r}")
        if doc.get("version") != SPEC_FORMAT_VERSION:
            raise ValidationError(f"unsupported model spec version {doc.get('version')!r}")
        return cls(
            m=int(doc["m"]),
            n=int(doc["n"]),
            b=np.array(doc["b"], dtype=np.float64),
            w=np.array(doc["w"], dtype=np.float64),
            gamma=np.array(doc["gamma"], dtype=np.float64),
            seed=doc.get("seed"),
        )


def random_qbm_spec(
    m: int,
    n: int,
    rng: np.random.Generator,
    scale: float = 0.5,
    hidden_gamma_only: bool = True,
    gamma_scale: float | None = None,
) -> QbmSpec:
    """Seeded random machine; transverse biases restricted to hidden
    sites by default so the model keeps its block-diagonal form."""
    total = m + n
    b = rng.uniform(-scale, scale, total)
    w = rng.uniform(-scale, scale, (total, total))
    w = np.triu(w, 1)
    w = w + w.T
    gs = scale if gamma_scale is None else gamma_scale
    gamma = rng.uniform(-gs, gs, total)
    if hidden_gamma_only:
        gamma[:m] = 0.0
    return QbmSpec(m, n, b, w, gamma)


def build_qbm_hamiltonian(spec: QbmSpec) -> ParamHamiltonian:
    """Dense Hamiltonian with one negated Pauli term per parameter:
    -b_i Z_i - w_ij Z_i Z_j - gamma_i X_i."""
    total = spec.total_qubits
    if total > MAX_EXACT_QUBITS:
        raise ValidationError(
            f"{total} qubits exceeds the exact-path cap of {MAX_EXACT_QUBITS}"
        )
    dim = 2**total
    terms: list[np.ndarray] = []
    for i in range(total):
        terms.append(-pauli_term(total, i + 1, "z"))
    for i, j in spec.coupling_pairs():
        terms.append(-(pauli_term(total, i + 1, "z") @ pauli_term(total, j + 1, "z")))
    for i in range(total):
        terms.append(-pauli_term(total, i + 1, "x"))
    return ParamHamiltonian(
        dim=dim, terms=terms, theta=spec.theta(), dims=(2**spec.m, 2**spec.n)
    )


def gibbs_state(h: ParamHamiltonian | np.ndarray, dims: Sequence[int] | None = None) -> DensityOperator:
    """Gibbs state exp(H)/Tr exp(H), computed spectrally with a
    max-eigenvalue shift for overflow safety."""
    if isinstance(h, ParamHamiltonian):
        mat = h.matrix()
        if dims is None:
            dims = h.dims if h.dims is not None else (h.dim,)
    else:
        mat = require_hermitian(h)
        if dims is None:
            dims = (mat.shape[0],)
    if mat.shape[0] > 2**MAX_EXACT_QUBITS:
        raise ValidationError(
            f"dimension {mat.shape[0]} exceeds the exact-path cap of 2^{MAX_EXACT_QUBITS}"
        )
    w, u = herm_eig(mat, check=False)
    weights = np.exp(w - w.max())
    z = weights.sum()
    rho = (u * (weights / z)) @ u.conj().T
    rho = 0.5 * (rho + rho.conj().T)
    return DensityOperator(rho, tuple(dims))


def model_marginal(rho: DensityOperator, d_v: int) -> DensityOperator:
    """Visible marginal of a joint state over d_v visible qubits."""
    dv = 2**d_v
    if rho.dim % dv != 0 or rho.dim == dv:
        raise ValidationError(
            f"joint dimension {rho.dim} does not decompose over {d_v} visible qubits"
        )
    if rho.dims != (dv, rho.dim // dv):
        rho = DensityOperator(rho.mat, (dv, rho.dim // dv), validate=False)
    return partial_trace(rho, -1)


def log_likelihood(eta_v: DensityOperator, rho_v: DensityOperator) -> float:
    """Average log-likelihood Tr(eta_v log rho_v); ``-inf`` when the
    target has support outside the model marginal's support."""
    if eta_v.dim != rho_v.dim:
        raise ValidationError(
            f"log_likelihood dimension mismatch: {eta_v.dim} vs {rho_v.dim}"
        )
    w_e, u_e = eta_v.eig()
    w_r, u_r = rho_v.eig()
    w_e = np.clip(w_e, 0.0, None)
    overlap = np.abs(u_e.conj().T @ u_r) ** 2
    kernel = w_r <= eps_rank(w_r)
    if kernel.any():
        mass = float(w_e @ overlap[:, kernel].sum(axis=1))
        if mass > 1e-10:
            return -math.inf
    log_r = np.where(kernel, 0.0, np.log(np.where(kernel, 1.0, w_r)))
    return float(w_e @ (overlap @ log_r))


@dataclass(eq=False)
class CqlvmModel:
    """Block-diagonal form of a machine with hidden-only transverse
    biases: one hidden-space Hamiltonian block per visible basis state,
    assembled by clamping the visible Z values, without ever
    materializing the full operator.

    Per-parameter structure: each parameter's contribution to block k is
    ``coeff_r[k] * op_r`` for a fixed hidden-space operator ``op_r`` and
    per-block scalar coefficients, which keeps both block assembly and
    exact gradients cheap. Parameter order matches the dense packing;
    visible transverse parameters are present but structurally zero.
    """

    spec: QbmSpec
    coeffs: np.ndarray = field(repr=False)  # (n_params, 2**m)
    ops: list[np.ndarray] = field(repr=False)  # hidden-space operator per parameter

    @property
    def d_v(self) -> int:
        return self.spec.m

    @property
    def n_blocks(self) -> int:
        return 2**self.spec.m

    @property
    def hidden_dim(self) -> int:
        return 2**self.spec.n

    @property
    def n_params(self) -> int:
        return self.coeffs.shape[0]

    def block_hamiltonians(self, theta: np.ndarray | None = None) -> np.ndarray:
        """Stacked (2**m, 2**n, 2**n) Hermitian blocks for parameters
        ``theta`` (defaults to the spec's own)."""
        th = self.spec.theta() if theta is None else np.asarray(theta, dtype=np.float64)
        if th.size != self.n_params:
            raise ValidationError(f"theta length {th.size} does not match {self.n_params}")
        blocks = np.zeros((self.n_blocks, self.hidden_dim, self.hidden_dim), dtype=np.complex128)
        for r in range(self.n_params):
            if th[r] == 0.0:
                continue
            blocks += (th[r] * self.coeffs[r])[:, None, None] * self.ops[r][None, :, :]
        return blocks

    def term_expectations(self, states: np.ndarray) -> np.ndarray:
        """Per-parameter expectations sum_k Tr(states[k] @ T_r[k]) for a
        stack of (possibly sub-normalized) hidden-space matrices."""
        out = np.empty(self.n_params)
        for r in range(self.n_params):
            per_block = np.einsum("kij,ji->k", states, self.ops[r]).real
            out[r] = float(self.coeffs[r] @ per_block)
        return out

    def assemble_dense(self, theta: np.ndarray | None = None) -> np.ndarray:
        """Direct sum of the blocks; refused above the exact-path cap."""
        if self.spec.total_qubits > MAX_EXACT_QUBITS:
            raise ValidationError(
                f"dense reconstruction refused above the {MAX_EXACT_QUBITS}-qubit cap"
            )
        blocks = self.block_hamiltonians(theta)
        dim = self.n_blocks * self.hidden_dim
        out = np.zeros((dim, dim), dtype=np.complex128)
        for k in range(self.n_blocks):
            sl = slice(k * self.hidden_dim, (k + 1) * self.hidden_dim)
            out[sl, sl] = blocks[k]
        return out


def _hidden_pauli(n: int, site: int, axis: str) -> np.ndarray:
    return pauli_term(n, site + 1, axis) if n > 0 else np.array([[1.0 + 0j]])


def cqlvm_blocks(spec: QbmSpec) -> CqlvmModel:
    """Block decomposition of the machine obtained by clamping visible
    Z values to each bit pattern; requires hidden-only transverse
    biases."""
    if not spec.is_cqlvm():
        bad = np.nonzero(spec.gamma[: spec.m])[0] + 1
        raise ValidationError(
            f"visible transverse terms on site(s) {bad.tolist()} break the "
            "classical-visible block structure"
        )
    m, n = spec.m, spec.n
    sz = all_sz_values(m)  # (2**m, m), +1 where bit 0
    n_blocks = 2**m
    eye_h = np.eye(2**n, dtype=np.complex128)

    coeffs: list[np.ndarray] = []
    ops: list[np.ndarray] = []

    # Z biases.
    for i in range(m + n):
        if i < m:
            coeffs.append(-sz[:, i])
            ops.append(eye_h)
        else:
            coeffs.append(-np.ones(n_blocks))
            ops.append(_hidden_pauli(n, i - m, "z"))
    # ZZ couplings, lower-triangle pair order (i > j).
    for i, j in spec.coupling_pairs():
        if i < m:  # both visible (i > j forces j visible too)
            coeffs.append(-sz[:, i] * sz[:, j])
            ops.append(eye_h)
        elif j < m:  # hidden i, visible j
            coeffs.append(-sz[:, j])
            ops.append(_hidden_pauli(n, i - m, "z"))
        else:  # both hidden
            coeffs.append(-np.ones(n_blocks))
            ops.append(_hidden_pauli(n, i - m, "z") @ _hidden_pauli(n, j - m, "z"))
    # Transverse biases: visible ones are structurally zero.
    for i in range(m + n):
        if i < m:
            coeffs.append(np.zeros(n_blocks))
            ops.append(np.zeros_like(eye_h))
        else:
            coeffs.append(-np.ones(n_blocks))
            ops.append(_hidden_pauli(n, i - m, "x"))

    return CqlvmModel(spec=spec, coeffs=np.array(coeffs), ops=ops)
