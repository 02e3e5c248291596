import numpy as np
import pytest
from numpy.testing import assert_allclose

from lib.errors import AsymmetricMatrixError, NonFiniteError, ShapeError
from lib.linalg import (
    cluster_ranges,
    dft2_magnitude,
    eigengap,
    econ_svd,
    is_admissible,
    orthonormal_completion,
    principal_angles,
    random_admissible,
    random_orthogonal,
    random_orthogonal_batch,
    seed_sequence,
    sign_rule,
    subspace_dist,
    sym_eig_ascending,
)


class TestEconSvd:
    def test_reconstructs(self, rng):
        A = rng.standard_normal((6, 4))
        svd = econ_svd(A)
        assert svd.rank == 4
        assert_allclose(svd.reconstruct(), A, atol=1e-12)
        assert_allclose(svd.U.T @ svd.U, np.eye(4), atol=1e-12)

    def test_truncates_rank(self, rng):
        u, v = rng.standard_normal(5), rng.standard_normal(3)
        svd = econ_svd(np.outer(u, v))
        assert svd.rank == 1
        assert svd.U.shape == (5, 1)

    def test_zero_matrix_has_rank_zero(self):
        svd = econ_svd(np.zeros((3, 2)))
        assert svd.rank == 0
        assert svd.U.shape == (3, 0)

    def test_sign_rule_applied(self, rng):
        U = econ_svd(rng.standard_normal((7, 7))).U
        idx = np.argmax(np.abs(U), axis=0)
        assert np.all(U[idx, np.arange(7)] > 0)

    def test_rejects_nan(self):
        with pytest.raises(NonFiniteError):
            econ_svd(np.array([[1.0, np.nan]]))

    def test_rejects_vector(self):
        with pytest.raises(ShapeError):
            econ_svd(np.ones(3))


class TestSymEig:
    def test_ascending(self, rng):
        B = rng.standard_normal((5, 5))
        eig = sym_eig_ascending(B + B.T)
        assert np.all(np.diff(eig.values) >= 0)

    def test_repeated_values_use_canonical_basis(self):
        eig = sym_eig_ascending(np.eye(3))
        assert_allclose(eig.vectors, np.eye(3), atol=1e-12)

    def test_asymmetric_raises(self):
        with pytest.raises(AsymmetricMatrixError):
            sym_eig_ascending(np.array([[1.0, 2.0], [0.0, 1.0]]))


class TestFrames:
    def test_subspace_dist_ignores_column_signs(self, rng):
        U = random_orthogonal(5, rng)[:, :3]
        assert subspace_dist(U * np.array([1.0, -1.0, -1.0]), U) == pytest.approx(0.0, abs=1e-14)

    def test_principal_angles_of_same_span(self, rng):
        U = random_orthogonal(6, rng)[:, :2]
        R = random_orthogonal(2, rng)
        assert_allclose(principal_angles(U @ R, U), 0.0, atol=1e-7)

    def test_admissibility(self):
        assert is_admissible(np.diag([3.0, 2.0, 1.0]))
        assert not is_admissible(np.eye(2))
        assert not is_admissible(np.zeros((2, 2)))
        assert not is_admissible(np.diag([1.0, 0.0]))

    def test_orthonormal_completion(self, rng):
        U = random_orthogonal(5, rng)[:, :2]
        Q = np.column_stack([U, orthonormal_completion(U)])
        assert_allclose(Q.T @ Q, np.eye(5), atol=1e-12)

    def test_cluster_ranges(self):
        assert cluster_ranges(np.array([0.0, 0.0, 1.0, 4.0, 4.0])) == [(0, 2), (2, 3), (3, 5)]

    def test_sign_rule_prefers_lowest_index_on_tie(self):
        U = np.array([[-1.0], [1.0]]) / np.sqrt(2.0)
        assert_allclose(sign_rule(U), [-1.0])


class TestRandom:
    def test_random_admissible_spectrum(self):
        W = random_admissible(4, 6, seed=3)
        assert_allclose(np.linalg.svd(W, compute_uv=False), 0.6 ** np.arange(4), rtol=1e-12)

    def test_orthogonal_batch(self):
        Qs = random_orthogonal_batch(4, 5, seed=1)
        assert Qs.shape == (5, 4, 4)
        for Q in Qs:
            assert_allclose(Q @ Q.T, np.eye(4), atol=1e-12)

    def test_same_seed_same_draw(self):
        assert_allclose(random_orthogonal(6, 11), random_orthogonal(6, 11))

    def test_seed_sequence_passthrough(self):
        ss = np.random.SeedSequence(5)
        assert seed_sequence(ss) is ss
        assert seed_sequence(5).entropy == 5


def test_dft2_magnitude_of_constant():
    F = dft2_magnitude(np.ones((4, 4)))
    expected = np.zeros((4, 4))
    expected[0, 0] = 4.0
    assert_allclose(F, expected, atol=1e-12)


class TestSpectralHelpers:
    def test_eigengap_is_smallest_spacing(self):
        assert eigengap(np.diag([1.0, 4.0, 2.0])) == pytest.approx(1.0)
        assert eigengap(np.diag([3.0, 3.0])) == pytest.approx(0.0, abs=1e-14)

    def test_eigengap_of_scalar_is_infinite(self):
        assert eigengap(np.array([[2.0]])) == float("inf")

    def test_eigengap_asymmetric_raises(self):
        with pytest.raises(AsymmetricMatrixError):
            eigengap(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_dft2_parseval(self, rng):
        A = rng.standard_normal((5, 7))
        assert np.linalg.norm(dft2_magnitude(A)) == pytest.approx(np.linalg.norm(A), rel=1e-12)

    def test_dft2_impulse_is_flat(self):
        A = np.zeros((5, 7))
        A[2, 3] = 1.0
        assert_allclose(dft2_magnitude(A), np.full((5, 7), 1.0 / np.sqrt(35)), atol=1e-14)
