import numpy as np
import pytest

from doem.linalg import DensityOperator, kron


def rand_hermitian(rng: np.random.Generator, d: int, scale: float = 1.0) -> np.ndarray:
    g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    h = (g + g.conj().T) / 2
    return scale * h / max(np.abs(np.linalg.eigvalsh(h)).max(), 1e-12)


def rand_density_mat(rng: np.random.Generator, d: int, floor: float = 0.0) -> np.ndarray:
    g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    a = g @ g.conj().T
    a /= np.trace(a).real
    if floor > 0.0:
        a = (1.0 - floor) * a + floor * np.eye(d) / d
    return a


def rand_density(rng: np.random.Generator, dims, floor: float = 0.0) -> DensityOperator:
    dims = (dims,) if isinstance(dims, int) else tuple(dims)
    d = int(np.prod(dims))
    return DensityOperator(rand_density_mat(rng, d, floor), dims)


def haar_unitary(rng: np.random.Generator, d: int) -> np.ndarray:
    g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    q, r = np.linalg.qr(g)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def condition_s_instance(rng: np.random.Generator, d_v: int, d_l: int):
    """Random instance of the sufficiency condition: a full-rank
    block-separable joint state and a commuting visible target.
    Weights and blocks are floored away from singularity so the
    recovery map stays well conditioned."""
    u = haar_unitary(rng, d_v)
    alphas = rng.dirichlet(np.ones(d_v) * 3.0)
    alphas = np.clip(alphas, 0.05, None)
    alphas /= alphas.sum()
    betas = rng.dirichlet(np.ones(d_v) * 3.0)
    betas = np.clip(betas, 0.05, None)
    betas /= betas.sum()
    blocks = [rand_density_mat(rng, d_l, floor=0.1) for _ in range(d_v)]
    rho = np.zeros((d_v * d_l, d_v * d_l), dtype=np.complex128)
    omega = np.zeros((d_v, d_v), dtype=np.complex128)
    for i in range(d_v):
        proj = np.outer(u[:, i], u[:, i].conj())
        rho += alphas[i] * kron(proj, blocks[i])
        omega += betas[i] * proj
    return (
        DensityOperator(omega, (d_v,)),
        DensityOperator(rho, (d_v, d_l)),
        {"basis": u, "alphas": alphas, "betas": betas, "blocks": blocks},
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
