"""EM training loop for density-operator latent variable models.

Alternates an information-projection E-step with a partial M-step
(gradient ascent with backtracking on the surrogate objective
``Q(theta) = Tr(eta H(theta)) - log Z(theta)``, which is exact for
Hamiltonians linear in their parameters).

Two equivalent execution paths are provided:

* a dense path over explicit joint density operators, for any model
  within the exact-dimension cap whose state satisfies the sufficiency
  condition at every iterate;
* a block path for models with classical visible distributions, which
  works per visible basis state on hidden-space blocks and never
  materializes the joint operator.

Both paths produce identical parameter trajectories up to floating
error; the tests cross-validate them.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .basis import basis_indices_of_rows
from .errors import ConditionSError, NumericError, ValidationError
from .linalg import DensityOperator, partial_trace, trace_product
from .models import CqlvmModel, ParamHamiltonian, QbmSpec, cqlvm_blocks, gibbs_state
from .qinfo import qip_project, relative_entropy, von_neumann_entropy

MARGINAL_FEASIBILITY_TOL = 1e-8
ASCENT_SLACK = 1e-9
BACKTRACK_SLACK = 1e-12
MAX_HALVINGS = 20


@dataclass
class DoemConfig:
    """Knobs of the outer EM loop and the inner ascent."""

    max_outer_iters: int = 100
    m_step_inner_iters: int = 5
    learning_rate: float = 0.2
    grad_tol: float = 1e-6
    ascent_check: bool = True
    seed: int = 0
    checkpoint_every: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if self.grad_tol <= 0:
            raise ValidationError("grad_tol must be positive")
        if self.max_outer_iters < 1 or self.m_step_inner_iters < 1:
            raise ValidationError("iteration budgets must be at least 1")


@dataclass
class TraceRow:
    iter: int
    loglik: float
    qelbo: float
    rel_entropy: float
    grad_norm: float
    seconds: float


@dataclass
class TrainTrace:
    """Per-iteration training record plus the stop reason."""

    rows: list[TraceRow] = field(default_factory=list)
    stop_reason: str = ""

    def loglik(self) -> np.ndarray:
        return np.array([r.loglik for r in self.rows])

    def rel_entropy(self) -> np.ndarray:
        return np.array([r.rel_entropy for r in self.rows])

    def to_csv(self, include_timing: bool = False) -> str:
        """CSV export. Timing is excluded by default so that reruns with
        the same seed produce byte-identical files; pass
        ``include_timing=True`` for the diagnostic variant."""
        cols = "iter,loglik,qelbo,rel_entropy,grad_norm"
        lines = [cols + (",seconds" if include_timing else "")]
        for r in self.rows:
            base = f"{r.iter},{r.loglik!r},{r.qelbo!r},{r.rel_entropy!r},{r.grad_norm!r}"
            lines.append(base + (f",{r.seconds!r}" if include_timing else ""))
        return "\n".join(lines) + "\n"

    def timing_csv(self) -> str:
        lines = ["iter,seconds"]
        for r in self.rows:
            lines.append(f"{r.iter},{r.seconds!r}")
        return "\n".join(lines) + "\n"


@dataclass
class DoemResult:
    spec: QbmSpec
    theta: np.ndarray
    trace: TrainTrace


# ---------------------------------------------------------------------------
# Dense path operations
# ---------------------------------------------------------------------------


def qelbo(
    eta: DensityOperator,
    theta: np.ndarray | None,
    model: ParamHamiltonian,
    eta_v: DensityOperator,
) -> float:
    """Evidence lower bound Tr(eta log rho(theta)) + S(eta) - S(eta_v).

    ``eta`` must be a feasible extension of ``eta_v`` (its latent-space
    marginal must match within tolerance).
    """
    marg = partial_trace(eta, -1)
    dev = float(np.abs(marg.mat - eta_v.mat).max())
    if dev > MARGINAL_FEASIBILITY_TOL:
        raise ValidationError(
            f"infeasible extension: marginal deviates from target by {dev:.3e}"
        )
    h = model.matrix(theta)
    w = np.linalg.eigvalsh(h)
    log_z = float(w.max() + np.log(np.sum(np.exp(w - w.max()))))
    energy = trace_product(eta.mat, h).real
    return energy - log_z + von_neumann_entropy(eta) - von_neumann_entropy(eta_v)


def e_step(eta_v: DensityOperator, model_state: DensityOperator) -> DensityOperator:
    """Information projection of the model state onto the feasible
    extensions of the target; refuses when the sufficiency condition
    fails."""
    return qip_project(eta_v, model_state)


def m_step_gradient(
    eta: DensityOperator, model: ParamHamiltonian, theta: np.ndarray | None = None
) -> np.ndarray:
    """Exact gradient of Q: component r is Tr(eta H_r) - Tr(rho(theta) H_r)."""
    th = model.theta if theta is None else np.asarray(theta, dtype=np.float64)
    rho = gibbs_state(model.matrix(th), dims=(model.dim,))
    return np.array(
        [
            (trace_product(eta.mat, t) - trace_product(rho.mat, t)).real
            for t in model.terms
        ]
    )


@dataclass
class MStepResult:
    theta: np.ndarray
    q_value: float
    grad_norm: float
    collapsed: bool
    inner_iters: int


def _ascend(theta0, q_value, q_grad, config: DoemConfig) -> MStepResult:
    """Backtracking gradient ascent shared by both paths. The surrogate
    only needs to improve, not be maximized, for the outer loop to keep
    its ascent guarantee."""
    theta = np.asarray(theta0, dtype=np.float64).copy()
    grad_norm = 0.0
    for it in range(config.m_step_inner_iters):
        g = q_grad(theta)
        grad_norm = float(np.abs(g).max())
        if grad_norm < config.grad_tol:
            return MStepResult(theta, q_value(theta), grad_norm, False, it)
        q0 = q_value(theta)
        step = config.learning_rate
        for _ in range(MAX_HALVINGS + 1):
            cand = theta + step * g
            if q_value(cand) >= q0 - BACKTRACK_SLACK:
                theta = cand
                break
            step *= 0.5
        else:
            return MStepResult(theta, q0, grad_norm, True, it)
    return MStepResult(theta, q_value(theta), grad_norm, False, config.m_step_inner_iters)


def m_step(
    eta: DensityOperator, model: ParamHamiltonian, config: DoemConfig
) -> MStepResult:
    """Partial maximization of Q(theta) = Tr(eta H(theta)) - log Z(theta)
    by backtracking gradient ascent from the model's current parameters."""
    data_vec = np.array([trace_product(eta.mat, t).real for t in model.terms])

    def q_value(th):
        w = np.linalg.eigvalsh(model.matrix(th))
        log_z = float(w.max() + np.log(np.sum(np.exp(w - w.max()))))
        return float(data_vec @ th) - log_z

    def q_grad(th):
        rho = gibbs_state(model.matrix(th), dims=(model.dim,))
        model_vec = np.array([trace_product(rho.mat, t).real for t in model.terms])
        return data_vec - model_vec

    return _ascend(model.theta, q_value, q_grad, config)


# ---------------------------------------------------------------------------
# Block path
# ---------------------------------------------------------------------------


def _batched_eigh(blocks: np.ndarray, threads: int = 1):
    if threads <= 1 or blocks.shape[0] < 4 * threads:
        return np.linalg.eigh(blocks)
    chunks = np.array_split(np.arange(blocks.shape[0]), threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda idx: np.linalg.eigh(blocks[idx]), chunks))
    w = np.concatenate([p[0] for p in parts], axis=0)
    v = np.concatenate([p[1] for p in parts], axis=0)
    return w, v


@dataclass(eq=False)
class BlockState:
    """Everything the loop needs about the model at one parameter
    point: per-block log trace-exponentials, visible log-probabilities,
    and normalized conditional hidden-space states."""

    theta: np.ndarray
    log_tr_exp: np.ndarray  # (2**m,)
    log_z: float
    log_probs: np.ndarray  # (2**m,)
    conditionals: np.ndarray  # (2**m, 2**n, 2**n)
    cond_entropies: np.ndarray  # (2**m,)


class BlockDoem:
    """Per-datapoint EM engine for models with classical visible
    distributions. Works on hidden-space blocks only."""

    def __init__(self, model: CqlvmModel, threads: int = 1):
        self.model = model
        self.threads = max(1, int(threads))

    def state(self, theta: np.ndarray) -> BlockState:
        blocks = self.model.block_hamiltonians(theta)
        w, u = _batched_eigh(blocks, self.threads)
        shift = w.max(axis=1, keepdims=True)
        expw = np.exp(w - shift)
        tr = expw.sum(axis=1)
        log_tr_exp = (shift[:, 0] + np.log(tr)).astype(np.float64)
        top = log_tr_exp.max()
        log_z = float(top + np.log(np.sum(np.exp(log_tr_exp - top))))
        log_probs = log_tr_exp - log_z
        probs_within = expw / tr[:, None]
        conditionals = np.einsum("kij,kj,klj->kil", u, probs_within, u.conj())
        cond_entropies = -np.einsum(
            "kj->k", np.where(probs_within > 0, probs_within * np.log(np.where(probs_within > 0, probs_within, 1.0)), 0.0)
        )
        return BlockState(
            theta=np.asarray(theta, dtype=np.float64),
            log_tr_exp=log_tr_exp,
            log_z=log_z,
            log_probs=log_probs,
            conditionals=conditionals,
            cond_entropies=cond_entropies,
        )

    def loglik(self, probs_data: np.ndarray, state: BlockState) -> float:
        mask = probs_data > 0
        return float(probs_data[mask] @ state.log_probs[mask])

    def rel_entropy(self, probs_data: np.ndarray, state: BlockState) -> float:
        mask = probs_data > 0
        p = probs_data[mask]
        return float(p @ (np.log(p) - state.log_probs[mask]))

    def e_step_blocks(self, probs_data: np.ndarray, state: BlockState) -> np.ndarray:
        """Feasible extension blocks: empirical weight times the model's
        conditional hidden state, per visible basis state."""
        return probs_data[:, None, None] * state.conditionals

    def data_expectations(self, probs_data: np.ndarray, state: BlockState) -> np.ndarray:
        return self.model.term_expectations(self.e_step_blocks(probs_data, state))

    def model_expectations(self, state: BlockState) -> np.ndarray:
        probs = np.exp(state.log_probs)
        return self.model.term_expectations(probs[:, None, None] * state.conditionals)

    def qelbo(self, probs_data: np.ndarray, e_state: BlockState, theta: np.ndarray) -> float:
        """Bound evaluated at the E-step output of ``e_state`` and model
        parameters ``theta``: Q(theta) plus the conditional-entropy gap."""
        d = self.data_expectations(probs_data, e_state)
        state = self.state(theta) if not np.array_equal(theta, e_state.theta) else e_state
        q = float(d @ theta) - state.log_z
        return q + float(probs_data @ e_state.cond_entropies)

    def m_step(self, data_vec: np.ndarray, theta0: np.ndarray, config: DoemConfig) -> MStepResult:
        def q_value(th):
            st = self.state(th)
            return float(data_vec @ th) - st.log_z

        def q_grad(th):
            st = self.state(th)
            return data_vec - self.model_expectations(st)

        return _ascend(theta0, q_value, q_grad, config)

    def dense_eta(self, probs_data: np.ndarray, state: BlockState) -> DensityOperator:
        """Materialized E-step output, for cross-validation at small
        dimension."""
        blocks = self.e_step_blocks(probs_data, state)
        d_h = self.model.hidden_dim
        dim = self.model.n_blocks * d_h
        out = np.zeros((dim, dim), dtype=np.complex128)
        for k in range(self.model.n_blocks):
            sl = slice(k * d_h, (k + 1) * d_h)
            out[sl, sl] = blocks[k]
        return DensityOperator(out, (self.model.n_blocks, d_h))


# ---------------------------------------------------------------------------
# Outer loop
# ---------------------------------------------------------------------------


def empirical_probs(rows: np.ndarray, d_v: int) -> np.ndarray:
    """Empirical distribution over visible basis states from 0/1 rows."""
    rows = np.asarray(rows)
    if rows.ndim != 2 or rows.shape[1] != d_v:
        raise ValidationError(f"rows shape {rows.shape} does not match {d_v} visible units")
    idx = basis_indices_of_rows(rows)
    counts = np.bincount(idx, minlength=2**d_v)
    return counts / counts.sum()


def _target_probs(target, d_v: int) -> np.ndarray:
    if isinstance(target, DensityOperator):
        off = np.abs(target.mat - np.diag(np.diag(target.mat))).max()
        if off > 1e-12:
            raise ValidationError(
                "block path needs a diagonal target; use the dense path instead"
            )
        return np.diag(target.mat).real.copy()
    arr = np.asarray(target)
    if arr.ndim == 1:
        if arr.size != 2**d_v:
            raise ValidationError(f"probability table length {arr.size} != 2^{d_v}")
        if abs(arr.sum() - 1.0) > 1e-9 or arr.min() < 0:
            raise ValidationError("probability table must be nonnegative and sum to 1")
        return arr.astype(np.float64)
    return empirical_probs(arr, d_v)


def run_doem(
    target,
    spec: QbmSpec,
    config: DoemConfig,
    method: str = "auto",
    checkpoint_dir=None,
) -> DoemResult:
    """Train a machine against a visible-space target by alternating
    projection E-steps and partial-ascent M-steps.

    ``target`` may be a 0/1 data matrix, a probability table over the
    visible basis, or a (diagonal) visible density operator. ``method``
    selects the per-datapoint block path (classical visible
    distribution required) or the dense path; ``auto`` picks blocks
    whenever the model structure allows it.
    """
    if method not in ("auto", "blocks", "dense"):
        raise ValidationError(f"unknown method {method!r}")
    if method == "auto":
        method = "blocks" if spec.is_cqlvm() else "dense"
    if method == "blocks":
        return _run_blocks(target, spec, config, checkpoint_dir)
    return _run_dense(target, spec, config, checkpoint_dir)


def _write_checkpoint(checkpoint_dir, spec: QbmSpec, theta: np.ndarray, it: int):
    if checkpoint_dir is None:
        return
    from pathlib import Path

    path = Path(checkpoint_dir)
    path.mkdir(parents=True, exist_ok=True)
    (path / f"model_{it:06d}.json").write_text(spec.with_theta(theta).to_json())


def _run_blocks(target, spec: QbmSpec, config: DoemConfig, checkpoint_dir) -> DoemResult:
    if not spec.is_cqlvm():
        raise ValidationError(
            "block path requires hidden-only transverse biases; "
            "the model has quantum terms on visible units"
        )
    probs_data = _target_probs(target, spec.m)
    engine = BlockDoem(cqlvm_blocks(spec), threads=config.threads)
    theta = spec.theta()
    trace = TrainTrace()
    prev_loglik = None
    recorded_current = False

    for t in range(config.max_outer_iters):
        t0 = time.perf_counter()
        state = engine.state(theta)
        loglik = engine.loglik(probs_data, state)
        if config.ascent_check and prev_loglik is not None and loglik < prev_loglik - ASCENT_SLACK:
            raise NumericError(
                f"log-likelihood decreased at iteration {t}: {prev_loglik!r} -> {loglik!r}"
            )
        data_vec = engine.data_expectations(probs_data, state)
        grad = data_vec - engine.model_expectations(state)
        grad_norm = float(np.abs(grad).max())
        qe = float(data_vec @ theta) - state.log_z + float(probs_data @ state.cond_entropies)
        trace.rows.append(
            TraceRow(
                iter=t,
                loglik=loglik,
                qelbo=qe,
                rel_entropy=engine.rel_entropy(probs_data, state),
                grad_norm=grad_norm,
                seconds=time.perf_counter() - t0,
            )
        )
        recorded_current = True
        if config.checkpoint_every and t % config.checkpoint_every == 0:
            _write_checkpoint(checkpoint_dir, spec, theta, t)
        if grad_norm < config.grad_tol:
            trace.stop_reason = "converged"
            break
        result = engine.m_step(data_vec, theta, config)
        theta = result.theta
        recorded_current = False
        prev_loglik = loglik
        if result.collapsed:
            trace.stop_reason = "step_collapse"
            break
    else:
        trace.stop_reason = "max_iters"

    if not recorded_current:
        t0 = time.perf_counter()
        state = engine.state(theta)
        loglik = engine.loglik(probs_data, state)
        if config.ascent_check and prev_loglik is not None and loglik < prev_loglik - ASCENT_SLACK:
            raise NumericError(
                f"log-likelihood decreased on the final update: {prev_loglik!r} -> {loglik!r}"
            )
        data_vec = engine.data_expectations(probs_data, state)
        grad = data_vec - engine.model_expectations(state)
        qe = float(data_vec @ theta) - state.log_z + float(probs_data @ state.cond_entropies)
        trace.rows.append(
            TraceRow(
                iter=len(trace.rows),
                loglik=loglik,
                qelbo=qe,
                rel_entropy=engine.rel_entropy(probs_data, state),
                grad_norm=float(np.abs(grad).max()),
                seconds=time.perf_counter() - t0,
            )
        )
    _write_checkpoint(checkpoint_dir, spec, theta, len(trace.rows) - 1)
    return DoemResult(spec=spec.with_theta(theta), theta=theta, trace=trace)


def _run_dense(target, spec: QbmSpec, config: DoemConfig, checkpoint_dir) -> DoemResult:
    from .models import build_qbm_hamiltonian  # local: keeps import cycle away

    if isinstance(target, DensityOperator):
        eta_v = target
    else:
        probs = _target_probs(target, spec.m)
        eta_v = DensityOperator(np.diag(probs.astype(np.complex128)), (2**spec.m,))
    ham = build_qbm_hamiltonian(spec)
    theta = spec.theta()
    trace = TrainTrace()
    prev_loglik = None
    recorded_current = False

    for t in range(config.max_outer_iters):
        t0 = time.perf_counter()
        ham.theta = theta
        rho = gibbs_state(ham)
        rho_v = partial_trace(rho, -1)
        loglik = _dense_loglik(eta_v, rho_v)
        if config.ascent_check and prev_loglik is not None and loglik < prev_loglik - ASCENT_SLACK:
            raise NumericError(
                f"log-likelihood decreased at iteration {t}: {prev_loglik!r} -> {loglik!r}"
            )
        try:
            eta = e_step(eta_v, rho)
        except ConditionSError as exc:
            raise ConditionSError(
                f"sufficiency condition lost at iteration {t}: {exc}"
            ) from exc
        grad = m_step_gradient(eta, ham, theta)
        grad_norm = float(np.abs(grad).max())
        qe = qelbo(eta, theta, ham, eta_v)
        trace.rows.append(
            TraceRow(
                iter=t,
                loglik=loglik,
                qelbo=qe,
                rel_entropy=relative_entropy(eta_v, rho_v),
                grad_norm=grad_norm,
                seconds=time.perf_counter() - t0,
            )
        )
        recorded_current = True
        if config.checkpoint_every and t % config.checkpoint_every == 0:
            _write_checkpoint(checkpoint_dir, spec, theta, t)
        if grad_norm < config.grad_tol:
            trace.stop_reason = "converged"
            break
        result = m_step(eta, ham, config)
        theta = result.theta
        recorded_current = False
        prev_loglik = loglik
        if result.collapsed:
            trace.stop_reason = "step_collapse"
            break
    else:
        trace.stop_reason = "max_iters"

    if not recorded_current:
        ham.theta = theta
        rho = gibbs_state(ham)
        rho_v = partial_trace(rho, -1)
        loglik = _dense_loglik(eta_v, rho_v)
        if config.ascent_check and prev_loglik is not None and loglik < prev_loglik - ASCENT_SLACK:
            raise NumericError(
                f"log-likelihood decreased on the final update: {prev_loglik!r} -> {loglik!r}"
            )
        eta = e_step(eta_v, rho)
        grad = m_step_gradient(eta, ham, theta)
        trace.rows.append(
            TraceRow(
                iter=len(trace.rows),
                loglik=loglik,
                qelbo=qelbo(eta, theta, ham, eta_v),
                rel_entropy=relative_entropy(eta_v, rho_v),
                grad_norm=float(np.abs(grad).max()),
                seconds=0.0,
            )
        )
    _write_checkpoint(checkpoint_dir, spec, theta, len(trace.rows) - 1)
    return DoemResult(spec=spec.with_theta(theta), theta=theta, trace=trace)


def _dense_loglik(eta_v: DensityOperator, rho_v: DensityOperator) -> float:
    from .models import log_likelihood

    return log_likelihood(eta_v, rho_v)
