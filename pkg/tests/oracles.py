"""Independent oracles for the test suite.

Everything here is deliberately computed by a route different from the
implementation under test: explicit enumeration over spin
configurations, dense Pauli algebra for the interleaved machine, a
scalar EM loop, and generic numerical minimization for the projection
problem.
"""

from __future__ import annotations

import itertools

import numpy as np

from doem.basis import all_sz_values
from doem.models import pauli_term

# ---------------------------------------------------------------------------
# Classical Boltzmann machine by enumeration
# ---------------------------------------------------------------------------


class EnumBM:
    """Classical +-1-spin Boltzmann machine over m visible and n hidden
    spins, with probabilities P(s) proportional to
    exp(-sum_i b_i s_i - sum_{i>j} w_ij s_i s_j), evaluated by explicit
    enumeration. Spin patterns are indexed like the package's basis
    convention (+1 where the index bit is 0)."""

    def __init__(self, m: int, n: int):
        self.m, self.n = m, n
        self.spins = all_sz_values(m + n)  # (2**(m+n), m+n)
        self.pairs = [(i, j) for i in range(1, m + n) for j in range(i)]
        # sufficient statistics phi_r(s) matching the packed parameter
        # order (b, w lower-triangle); signs mirror the negated terms.
        feats = [-self.spins[:, i] for i in range(m + n)]
        feats += [-self.spins[:, i] * self.spins[:, j] for i, j in self.pairs]
        self.phi = np.stack(feats, axis=1)  # (states, params)

    def n_params(self) -> int:
        return self.phi.shape[1]

    def log_weights(self, theta: np.ndarray) -> np.ndarray:
        return self.phi @ theta

    def log_z(self, theta: np.ndarray) -> float:
        lw = self.log_weights(theta)
        top = lw.max()
        return float(top + np.log(np.sum(np.exp(lw - top))))

    def joint_probs(self, theta: np.ndarray) -> np.ndarray:
        lw = self.log_weights(theta)
        w = np.exp(lw - lw.max())
        return w / w.sum()

    def visible_probs(self, theta: np.ndarray) -> np.ndarray:
        joint = self.joint_probs(theta).reshape(2**self.m, 2**self.n)
        return joint.sum(axis=1)

    def loglik(self, theta: np.ndarray, probs_data: np.ndarray) -> float:
        pv = self.visible_probs(theta)
        mask = probs_data > 0
        return float(probs_data[mask] @ np.log(pv[mask]))

    def posterior_weights(self, theta: np.ndarray, probs_data: np.ndarray) -> np.ndarray:
        """Joint weights P_D(v) q(h|v) over all states (the E-step)."""
        joint = self.joint_probs(theta).reshape(2**self.m, 2**self.n)
        cond = joint / joint.sum(axis=1, keepdims=True)
        return (probs_data[:, None] * cond).ravel()

    def em(self, theta0: np.ndarray, probs_data: np.ndarray, outer: int,
           inner: int, lr: float, grad_tol: float = 1e-6):
        """EM with the same partial-ascent M-step protocol as the
        trainer under test (backtracking halvings, 1e-12 slack), but all
        physics via enumeration. Returns the per-iteration parameter
        trajectory including the final point."""
        theta = np.asarray(theta0, dtype=np.float64).copy()
        trajectory = [theta.copy()]
        for _ in range(outer):
            d = self.posterior_weights(theta, probs_data) @ self.phi
            grad0 = d - self.joint_probs(theta) @ self.phi
            if np.abs(grad0).max() < grad_tol:
                break
            for _ in range(inner):
                g = d - self.joint_probs(theta) @ self.phi
                if np.abs(g).max() < grad_tol:
                    break
                q0 = float(d @ theta) - self.log_z(theta)
                step = lr
                for _ in range(21):
                    cand = theta + step * g
                    if float(d @ cand) - self.log_z(cand) >= q0 - 1e-12:
                        theta = cand
                        break
                    step *= 0.5
            trajectory.append(theta.copy())
        return trajectory


# ---------------------------------------------------------------------------
# Dense interleaved machine (plus-minus encoding)
# ---------------------------------------------------------------------------


def qidbm_dense_hamiltonian(params) -> np.ndarray:
    """Joint operator of the interleaved machine in the +-1 encoding,
    built from explicit Pauli products: the model state is exp(K)/Z
    with K = sum b Z + sum W1 Z Z + sum W2 Z Z + sum gamma X on the
    middle layer."""
    l, m, n = params.l, params.m, params.n
    total = l + m + n
    dim = 2**total
    k_op = np.zeros((dim, dim), dtype=np.complex128)
    z = [pauli_term(total, s + 1, "z") for s in range(total)]
    for s in range(total):
        k_op += params.b[s] * z[s]
    for i in range(l):
        for j in range(m):
            k_op += params.W1[i, j] * (z[i] @ z[l + j])
    for i in range(m):
        for j in range(n):
            k_op += params.W2[i, j] * (z[l + i] @ z[l + m + j])
    for j in range(m):
        k_op += params.gamma[j] * pauli_term(total, l + j + 1, "x")
    return k_op


def clamped_conditional_dense(params, v_vals: np.ndarray, h2_vals: np.ndarray) -> np.ndarray:
    """Exact conditional distribution over middle-layer +-1 patterns
    given clamped visible and top layers, from the dense operator."""
    l, m, n = params.l, params.m, params.n
    k_op = qidbm_dense_hamiltonian(params)
    v_bits = ((1 - np.asarray(v_vals, dtype=int)) // 2).tolist()
    h2_bits = ((1 - np.asarray(h2_vals, dtype=int)) // 2).tolist()
    idx = []
    for mid in itertools.product([0, 1], repeat=m):
        bits = v_bits + list(mid) + h2_bits
        k = 0
        for b in bits:
            k = (k << 1) | b
        idx.append(k)
    sub = k_op[np.ix_(idx, idx)]
    w, u = np.linalg.eigh(sub)
    block = (u * np.exp(w - w.max())) @ u.conj().T
    probs = np.diag(block).real
    return probs / probs.sum()


def qidbm_dense_visible_probs(params) -> np.ndarray:
    """Exact visible distribution of the dense +-1 machine, indexed by
    the package's bit convention (+1 value at index bit 0)."""
    k_op = qidbm_dense_hamiltonian(params)
    w, u = np.linalg.eigh(k_op)
    gibbs = (u * np.exp(w - w.max())) @ u.conj().T
    gibbs /= np.trace(gibbs).real
    diag = np.diag(gibbs).real
    joint = diag.reshape(2**params.l, -1)
    return joint.sum(axis=1)


# ---------------------------------------------------------------------------
# Relative entropy and projection by generic minimization
# ---------------------------------------------------------------------------


def rel_entropy_raw(omega: np.ndarray, rho: np.ndarray) -> float:
    """Straightforward eigenbasis formula, for oracle use."""
    w_o, u_o = np.linalg.eigh(omega)
    w_r, u_r = np.linalg.eigh(rho)
    w_o = np.clip(w_o, 0.0, None)
    overlap = np.abs(u_o.conj().T @ u_r) ** 2
    pos = w_o > 1e-15
    ent = float(np.sum(w_o[pos] * np.log(w_o[pos])))
    cross = float(w_o @ (overlap @ np.log(np.clip(w_r, 1e-300, None))))
    return ent - cross


def feasible_basis(d_v: int, d_l: int) -> list[np.ndarray]:
    """Real basis of the traceless-marginal subspace
    {B Hermitian : Tr_L B = 0} on a d_v x d_l system."""
    d = d_v * d_l
    herm = []
    for i in range(d):
        e = np.zeros((d, d), dtype=np.complex128)
        e[i, i] = 1.0
        herm.append(e)
    for i in range(d):
        for j in range(i + 1, d):
            e = np.zeros((d, d), dtype=np.complex128)
            e[i, j] = e[j, i] = 1.0
            herm.append(e)
            e = np.zeros((d, d), dtype=np.complex128)
            e[i, j] = 1j
            e[j, i] = -1j
            herm.append(e)

    def marg(b):
        t = b.reshape(d_v, d_l, d_v, d_l)
        red = np.trace(t, axis1=1, axis2=3)
        return np.concatenate([np.diag(red).real, red[np.triu_indices(d_v, 1)].real,
                               red[np.triu_indices(d_v, 1)].imag])

    mat = np.stack([marg(b) for b in herm], axis=1)  # (constraints, n_herm)
    _, s, vt = np.linalg.svd(mat)
    null_rows = [vt[i] for i in range(vt.shape[0]) if i >= s.size or s[i] <= 1e-10]
    basis = []
    for coeffs in null_rows:
        b = sum(c * h for c, h in zip(coeffs, herm))
        basis.append(b)
    return basis


def brute_force_qip(omega: np.ndarray, rho: np.ndarray, d_v: int, d_l: int,
                    n_restarts: int = 3, seed: int = 0):
    """Numerical minimization of D(xi, rho) over the feasible affine
    slice {xi PSD : Tr_L xi = omega}, parameterized by a basis of the
    traceless-marginal subspace with an eigenvalue-floor penalty."""
    from scipy.optimize import minimize

    basis = feasible_basis(d_v, d_l)
    eye_l = np.eye(d_l) / d_l
    xi0 = np.kron(omega, eye_l)  # feasible: Tr_L = omega * Tr(I/d_l) = omega

    def assemble(t):
        xi = xi0.copy()
        for c, b in zip(t, basis):
            xi = xi + c * b
        return xi

    def objective(t):
        xi = assemble(t)
        w = np.linalg.eigvalsh(xi)
        if w.min() < 1e-9:
            return 1e3 + 1e4 * (1e-9 - w.min())
        return rel_entropy_raw(xi, rho)

    rng = np.random.default_rng(seed)
    best_val, best_xi = np.inf, None
    for r in range(n_restarts):
        t0 = np.zeros(len(basis)) if r == 0 else rng.normal(0, 0.02, len(basis))
        res = minimize(objective, t0, method="BFGS",
                       options={"maxiter": 400, "gtol": 1e-10})
        if res.fun < best_val:
            best_val, best_xi = float(res.fun), assemble(res.x)
    return best_val, best_xi
