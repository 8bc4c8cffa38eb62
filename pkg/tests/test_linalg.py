import numpy as np
import pytest

from doem.errors import NumericError, ValidationError
from doem.linalg import (
    DensityOperator,
    direct_sum,
    herm_eig,
    kron,
    mat_exp,
    mat_fn_hermitian,
    mat_log,
    partial_trace,
    trace_product,
)
from doem.models import PAULI_X, PAULI_Z

from conftest import rand_density, rand_density_mat, rand_hermitian

I2 = np.eye(2)


class TestKron:
    def test_identity(self):
        np.testing.assert_array_equal(kron(I2, I2), np.eye(4))

    def test_z_cross_x_block_structure(self):
        # hand expansion: upper-left block +X, lower-right block -X
        expected = np.zeros((4, 4), dtype=complex)
        expected[:2, :2] = PAULI_X
        expected[2:, 2:] = -PAULI_X
        np.testing.assert_array_equal(kron(PAULI_Z, PAULI_X), expected)

    def test_scalar_factor(self, rng):
        m = rand_hermitian(rng, 3)
        np.testing.assert_allclose(kron([[2.5]], m), 2.5 * m)

    def test_distributes_over_direct_sum(self, rng):
        a = rand_hermitian(rng, 2)
        b = rand_hermitian(rng, 3)
        lhs = kron(direct_sum([a, b]), I2)
        rhs = direct_sum([kron(a, I2), kron(b, I2)])
        np.testing.assert_array_equal(lhs, rhs)


class TestDirectSum:
    def test_scalars(self):
        np.testing.assert_array_equal(direct_sum([[[1.0]], [[2.0]]]), np.diag([1.0, 2.0]))

    def test_two_z_blocks(self):
        np.testing.assert_array_equal(direct_sum([PAULI_Z, PAULI_Z]), np.diag([1.0, -1, 1, -1]))

    def test_single_block(self, rng):
        a = rand_hermitian(rng, 3)
        np.testing.assert_array_equal(direct_sum([a]), a)

    def test_off_block_exactly_zero(self, rng):
        out = direct_sum([rand_hermitian(rng, 2), rand_hermitian(rng, 2)])
        assert np.all(out[:2, 2:] == 0) and np.all(out[2:, :2] == 0)

    def test_rejects_non_square(self):
        with pytest.raises(ValidationError):
            direct_sum([np.ones((2, 3))])

    def test_rejects_empty(self):
        with pytest.raises(ValidationError):
            direct_sum([])


class TestPartialTrace:
    def test_product_state_returns_factor(self, rng):
        rho_a = rand_density_mat(rng, 2)
        rho_b = rand_density_mat(rng, 3)
        joint = DensityOperator(kron(rho_a, rho_b), (2, 3))
        np.testing.assert_allclose(partial_trace(joint, 1).mat, rho_a, atol=1e-12)
        np.testing.assert_allclose(partial_trace(joint, 0).mat, rho_b, atol=1e-12)

    def test_hand_index_sum(self):
        # Tr_B of diag(0.5, 0, 0, 0.5) on 2x2 dims: entries (r00+r11, r22+r33)
        rho = DensityOperator(np.diag([0.5, 0.0, 0.0, 0.5]), (2, 2))
        np.testing.assert_allclose(partial_trace(rho, 1).mat, np.diag([0.5, 0.5]), atol=1e-15)

    def test_bell_state_marginal(self):
        psi = np.array([1.0, 0.0, 0.0, 1.0]) / np.sqrt(2)
        rho = DensityOperator(np.outer(psi, psi), (2, 2))
        np.testing.assert_allclose(partial_trace(rho, 1).mat, I2 / 2, atol=1e-15)

    @pytest.mark.parametrize("dims", [(2, 2), (2, 4), (4, 2), (2, 2, 2)])
    def test_trace_preserved(self, rng, dims):
        rho = rand_density(rng, dims)
        for sub in range(len(dims)):
            reduced = partial_trace(rho, sub)
            assert abs(np.trace(reduced.mat).real - 1.0) < 1e-10
            assert reduced.dims == tuple(d for i, d in enumerate(dims) if i != sub)

    def test_invalid_index(self, rng):
        rho = rand_density(rng, (2, 2))
        with pytest.raises(ValidationError):
            partial_trace(rho, 2)


class TestHermEig:
    def test_pauli_z(self):
        w, _ = herm_eig(PAULI_Z)
        np.testing.assert_allclose(w, [-1.0, 1.0])

    def test_pauli_x_textbook(self):
        w, v = herm_eig(PAULI_X)
        np.testing.assert_allclose(w, [-1.0, 1.0])
        s = 1 / np.sqrt(2)
        np.testing.assert_allclose(v[:, 0], [s, -s], atol=1e-15)
        np.testing.assert_allclose(v[:, 1], [s, s], atol=1e-15)

    def test_diagonal_sorted(self):
        w, _ = herm_eig(np.diag([3.0, 1.0, 2.0]))
        np.testing.assert_allclose(w, [1.0, 2.0, 3.0])

    @pytest.mark.parametrize("d", [2, 4, 7])
    def test_reconstruction_and_orthonormality(self, rng, d):
        h = rand_hermitian(rng, d, scale=3.0)
        dec = herm_eig(h)
        scale = 1e-10 * d * max(np.abs(dec.eigenvalues).max(), 1.0)
        assert np.abs(dec.reconstruct() - h).max() < scale
        u = dec.eigenvectors
        assert np.abs(u.conj().T @ u - np.eye(d)).max() < 1e-10

    def test_deterministic_bits(self, rng):
        h = rand_hermitian(rng, 5)
        a = herm_eig(h)
        b = herm_eig(h.copy())
        assert np.array_equal(a.eigenvalues, b.eigenvalues)
        assert np.array_equal(a.eigenvectors, b.eigenvectors)

    def test_degenerate_phase_convention(self):
        # identity has a fully degenerate spectrum; the convention must
        # still produce a deterministic orthonormal basis
        dec = herm_eig(np.eye(3))
        assert np.abs(dec.eigenvectors.conj().T @ dec.eigenvectors - np.eye(3)).max() < 1e-12
        for j in range(3):
            col = dec.eigenvectors[:, j]
            first = col[np.argmax(np.abs(col) > 1e-12)]
            assert abs(first.imag) < 1e-12 and first.real > 0

    def test_rejects_non_hermitian(self):
        with pytest.raises(ValidationError):
            herm_eig(np.array([[0.0, 1.0], [0.0, 0.0]]))


class TestMatFn:
    def test_exp_of_diagonal(self):
        out = mat_exp(np.diag([1.0, -2.0]))
        np.testing.assert_allclose(out, np.diag([np.e, np.exp(-2.0)]), atol=1e-14)

    def test_exp_transverse_closed_form(self):
        # exp(g X) = cosh(g) I + sinh(g) X, from the 2x2 eigenbasis by hand
        g = 0.7
        expected = np.cosh(g) * I2 + np.sinh(g) * PAULI_X
        np.testing.assert_allclose(mat_exp(g * PAULI_X), expected, atol=1e-14)

    def test_log_exp_roundtrip(self, rng):
        h = rand_hermitian(rng, 4, scale=5.0)
        back = mat_log(mat_exp(h))
        assert np.abs(back - h).max() < 1e-9 * max(np.abs(h).max(), 1.0)

    def test_identity_function(self, rng):
        h = rand_hermitian(rng, 5)
        np.testing.assert_allclose(mat_fn_hermitian(h, lambda x: x), h, atol=1e-10)

    def test_log_of_singular_rejected(self):
        with pytest.raises(NumericError):
            mat_log(np.diag([1.0, 0.0]))

    def test_fn_undefined_at_eigenvalue(self):
        with pytest.raises(NumericError):
            mat_fn_hermitian(np.diag([1.0, -1.0]), np.log)


class TestTraceProduct:
    def test_identity_gives_trace(self, rng):
        m = rand_hermitian(rng, 4)
        assert abs(trace_product(np.eye(4), m) - np.trace(m)) < 1e-12

    def test_pauli_orthogonality(self):
        assert trace_product(PAULI_Z, PAULI_X) == 0

    def test_purity_of_pure_state(self):
        psi = np.array([1.0, 1j]) / np.sqrt(2)
        rho = np.outer(psi, psi.conj())
        assert abs(trace_product(rho, rho) - 1.0) < 1e-12

    def test_matches_full_product(self, rng):
        a = rng.standard_normal((3, 5)) + 1j * rng.standard_normal((3, 5))
        b = rng.standard_normal((5, 3)) + 1j * rng.standard_normal((5, 3))
        assert abs(trace_product(a, b) - np.trace(a @ b)) < 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            trace_product(np.eye(2), np.eye(3))


class TestDensityOperator:
    def test_rejects_bad_trace(self):
        with pytest.raises(ValidationError):
            DensityOperator(np.diag([0.7, 0.7]), (2,))

    def test_rejects_negative_eigenvalue(self):
        with pytest.raises(ValidationError):
            DensityOperator(np.diag([1.5, -0.5]), (2,))

    def test_rejects_dim_mismatch(self):
        with pytest.raises(ValidationError):
            DensityOperator(np.eye(4) / 4, (2, 3))

    def test_exp_output_is_finite_and_valid(self, rng):
        rho = rand_density(rng, (2, 2))
        assert rho.is_full_rank() or rho.eig().eigenvalues.min() >= -1e-10
