"""Quantum-information primitives built on the dense operator layer.

Provides von Neumann and relative entropy, the recovery map that reverses
the partial trace, the saturation (log-additivity) check for monotonicity
of relative entropy, verification of the sufficiency condition under
which that recovery map solves the information-projection problem, and
the projection solver itself.

The projection solver deliberately refuses inputs that fail the
sufficiency condition: outside it the projection problem has no known
closed-form solution, so returning the recovery map output would be an
unvalidated guess.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConditionSError, NumericError, ValidationError
from .linalg import (
    DensityOperator,
    eps_rank,
    herm_eig,
    kron,
    mat_inv_sqrt,
    mat_log,
    mat_sqrt,
    partial_trace,
    partial_trace_mat,
)

# Mass that a state may place on the other state's kernel before the
# relative entropy is reported as +infinity.
KERNEL_MASS_TOL = 1e-10

COMMUTATOR_TOL = 1e-9
PETZ_TRACE_DRIFT_TOL = 1e-9
CERT_REASSEMBLY_TOL = 1e-8
QIP_MARGINAL_TOL = 1e-9
QIP_ENTROPY_TOL = 1e-7


@dataclass(frozen=True)
class SupportInfo:
    """Numerical rank and support projector of a Hermitian PSD operator."""

    rank: int
    support_projector: np.ndarray


def support_info(mat) -> SupportInfo:
    w, u = herm_eig(mat)
    thresh = eps_rank(w)
    keep = w > thresh
    cols = u[:, keep]
    return SupportInfo(rank=int(keep.sum()), support_projector=cols @ cols.conj().T)


def von_neumann_entropy(rho: DensityOperator) -> float:
    """Entropy -sum(lam log lam) in nats over eigenvalues above the rank
    threshold."""
    w = rho.eig().eigenvalues
    w = w[w > eps_rank(w)]
    return float(-np.sum(w * np.log(w)))


def _split_vis(rho: DensityOperator) -> tuple[int, int]:
    if len(rho.dims) < 2:
        raise ValidationError(
            f"operator with dims {rho.dims} has no latent factor to trace out"
        )
    d_l = rho.dims[-1]
    d_v = rho.dim // d_l
    return d_v, d_l


def relative_entropy(omega: DensityOperator, rho: DensityOperator) -> float:
    """Relative entropy Tr(w log w) - Tr(w log r) in nats; ``math.inf``
    when ``omega`` has support on the kernel of ``rho``."""
    if omega.dim != rho.dim:
        raise ValidationError(
            f"relative_entropy dimension mismatch: {omega.dim} vs {rho.dim}"
        )
    w_o, u_o = omega.eig()
    w_r, u_r = rho.eig()
    w_o = np.clip(w_o, 0.0, None)

    overlap = np.abs(u_o.conj().T @ u_r) ** 2  # doubly stochastic

    rho_kernel = w_r <= eps_rank(w_r)
    if rho_kernel.any():
        mass = float(w_o @ overlap[:, rho_kernel].sum(axis=1))
        if mass > KERNEL_MASS_TOL:
            return math.inf

    omega_support = w_o > eps_rank(w_o)
    ent = float(np.sum(w_o[omega_support] * np.log(w_o[omega_support])))

    log_r = np.where(rho_kernel, 0.0, np.log(np.where(rho_kernel, 1.0, w_r)))
    cross = float(w_o @ (overlap @ log_r))
    return ent - cross


def petz_recovery(rho: DensityOperator, omega: DensityOperator) -> DensityOperator:
    """Recovery map for the partial trace:
    r^(1/2) ((r_V^(-1/2) w r_V^(-1/2)) x I_L) r^(1/2).

    ``rho`` lives on the joint space, ``omega`` on the visible space.
    ``rho`` must be numerically full rank -- the map is only trace
    preserving in that case -- and the output trace may drift from 1 by
    at most ``PETZ_TRACE_DRIFT_TOL`` before the result is rejected.
    """
    d_v, d_l = _split_vis(rho)
    if omega.dim != d_v:
        raise ValidationError(
            f"marginal dimension {omega.dim} does not match visible dimension {d_v}"
        )
    if not rho.is_full_rank():
        w = rho.eig().eigenvalues
        raise ValidationError(
            f"recovery map requires full-rank joint state; min eigenvalue {w.min():.3e}"
        )
    rho_v = partial_trace_mat(rho.mat, (d_v, d_l), 1)
    rho_v = 0.5 * (rho_v + rho_v.conj().T)
    sandwich = mat_inv_sqrt(rho_v, check=False)
    middle = sandwich @ omega.mat @ sandwich
    sqrt_rho = mat_sqrt(rho.mat, check=False)
    out = sqrt_rho @ kron(middle, np.eye(d_l)) @ sqrt_rho
    out = 0.5 * (out + out.conj().T)
    tr = float(np.trace(out).real)
    if abs(tr - 1.0) > PETZ_TRACE_DRIFT_TOL:
        raise NumericError(
            f"recovery map output trace drifted to {tr!r} "
            f"(tolerance {PETZ_TRACE_DRIFT_TOL})"
        )
    return DensityOperator(out / tr, rho.dims)


class RuskaiResult(NamedTuple):
    holds: bool
    residual: float


def check_ruskai(omega: DensityOperator, rho: DensityOperator, tol: float) -> RuskaiResult:
    """Saturation test for monotonicity of relative entropy under the
    partial trace: log w - log r must equal
    (log Tr_L w - log Tr_L r) x I_L.

    Both operators must be full rank (their logarithms must exist); a
    rank-deficient input surfaces as a support violation.
    """
    if omega.dim != rho.dim or omega.dims[-1] != rho.dims[-1]:
        raise ValidationError("check_ruskai operands must share dims")
    d_v, d_l = _split_vis(rho)
    try:
        log_omega = mat_log(omega.mat, check=False)
        log_rho = mat_log(rho.mat, check=False)
        log_omega_v = mat_log(partial_trace_mat(omega.mat, (d_v, d_l), 1), check=False)
        log_rho_v = mat_log(partial_trace_mat(rho.mat, (d_v, d_l), 1), check=False)
    except NumericError as exc:
        raise ValidationError(f"support violation in saturation check: {exc}") from exc
    lhs = log_omega - log_rho
    rhs = kron(log_omega_v - log_rho_v, np.eye(d_l))
    residual = float(np.abs(lhs - rhs).max())
    return RuskaiResult(residual <= tol, residual)


@dataclass(frozen=True)
class ConditionSCertificate:
    """Outcome of the sufficiency-condition check.

    When ``holds``, ``basis`` columns are the common eigenbasis vectors,
    ``alphas`` the nonnegative block weights summing to one, and
    ``blocks`` the normalized latent-space states, so that the input
    reassembles as sum_i alpha_i x_i x_i^dag (x) blocks[i].
    """

    holds: bool
    basis: np.ndarray | None
    alphas: np.ndarray | None
    blocks: list[DensityOperator] | None
    violation_report: str = ""


def _fail(report: str) -> ConditionSCertificate:
    return ConditionSCertificate(False, None, None, None, report)


def check_condition_s(omega: DensityOperator, rho: DensityOperator) -> ConditionSCertificate:
    """Verify the sufficiency condition between a visible-space target
    and a joint model state.

    Checks, in order: the joint state is full rank; the target commutes
    with the model marginal; and a common eigenbasis exists in which the
    joint state is block-diagonal with one latent block per basis
    vector. Failures are reported in the certificate, never raised.
    """
    d_v, d_l = _split_vis(rho)
    if omega.dim != d_v:
        return _fail(
            f"dimension mismatch: target dim {omega.dim}, visible dim {d_v}"
        )

    w_rho = rho.eig().eigenvalues
    if w_rho.min() <= eps_rank(w_rho):
        return _fail(
            f"joint state is rank deficient (min eigenvalue {w_rho.min():.3e})"
        )

    rho_v = partial_trace_mat(rho.mat, (d_v, d_l), 1)
    rho_v = 0.5 * (rho_v + rho_v.conj().T)
    scale = max(np.abs(omega.mat).max(), np.abs(rho_v).max(), 1e-300)
    comm = omega.mat @ rho_v - rho_v @ omega.mat
    comm_norm = float(np.abs(comm).max())
    if comm_norm > COMMUTATOR_TOL * scale:
        return _fail(
            f"target does not commute with the model marginal: "
            f"max-entry commutator {comm_norm:.3e} exceeds "
            f"{COMMUTATOR_TOL:.1e} * {scale:.3e}"
        )

    # Common eigenbasis by diagonalizing a random positive mixture of the
    # two commuting operators; retried with a fresh coefficient when a
    # degenerate mixture spoils simultaneous diagonalization.
    rng = np.random.default_rng(0x5EED)
    basis = None
    for _ in range(3):
        c = rng.uniform(0.5, 1.5)
        _, u = herm_eig(rho_v + c * omega.mat, check=False)
        off_omega = u.conj().T @ omega.mat @ u
        off_rho_v = u.conj().T @ rho_v @ u
        off = max(
            np.abs(off_omega - np.diag(np.diag(off_omega))).max(),
            np.abs(off_rho_v - np.diag(np.diag(off_rho_v))).max(),
        )
        if off <= 1e-9 * scale:
            basis = u
            break
    if basis is None:
        return _fail(
            "no common eigenbasis found after 3 attempts "
            "(degenerate mixtures of target and marginal)"
        )

    # Rotate only the visible factor and read off latent blocks.
    rot = kron(basis, np.eye(d_l))
    rho_rot = rot.conj().T @ rho.mat @ rot
    blocks_raw = rho_rot.reshape(d_v, d_l, d_v, d_l)

    alphas = np.empty(d_v)
    blocks: list[DensityOperator] = []
    for i in range(d_v):
        alpha = float(np.trace(blocks_raw[i, :, i, :]).real)
        alphas[i] = alpha
        if alpha <= 0.0:
            return _fail(f"block {i} has nonpositive weight {alpha:.3e}")
        block = blocks_raw[i, :, i, :] / alpha
        block = 0.5 * (block + block.conj().T)
        try:
            blocks.append(DensityOperator(block, (d_l,)))
        except ValidationError as exc:
            return _fail(f"block {i} is not a valid latent state: {exc}")

    reassembled = np.zeros_like(rho.mat)
    for i in range(d_v):
        proj = np.outer(basis[:, i], basis[:, i].conj())
        reassembled += alphas[i] * kron(proj, blocks[i].mat)
    residual = float(np.abs(reassembled - rho.mat).max())
    if residual > CERT_REASSEMBLY_TOL:
        return _fail(
            f"joint state is not block-separable in the common eigenbasis: "
            f"reassembly residual {residual:.3e} exceeds {CERT_REASSEMBLY_TOL:.1e}"
        )
    return ConditionSCertificate(True, basis, alphas, blocks, "")


def qip_project(omega: DensityOperator, rho: DensityOperator) -> DensityOperator:
    """Information projection of ``rho`` onto the set of joint states
    whose visible marginal equals ``omega``.

    Valid only under the sufficiency condition, where the recovery map
    attains the theoretical minimum; refuses otherwise. The output is
    verified to reproduce the target marginal and to attain the
    relative-entropy lower bound.
    """
    cert = check_condition_s(omega, rho)
    if not cert.holds:
        raise ConditionSError(
            f"projection refused, sufficiency condition violated: {cert.violation_report}"
        )
    projected = petz_recovery(rho, omega)

    marginal = partial_trace(projected, -1)
    marginal_err = float(np.abs(marginal.mat - omega.mat).max())
    if marginal_err > QIP_MARGINAL_TOL:
        raise NumericError(
            f"projection failed to reproduce the target marginal "
            f"(max deviation {marginal_err:.3e})"
        )

    rho_v = partial_trace(rho, -1)
    attained = relative_entropy(projected, rho)
    bound = relative_entropy(omega, rho_v)
    if not math.isfinite(attained) or abs(attained - bound) > QIP_ENTROPY_TOL:
        raise NumericError(
            f"projection did not attain the relative-entropy bound: "
            f"{attained!r} vs {bound!r}"
        )
    return projected
