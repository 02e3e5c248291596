import numpy as np
import pytest
from numpy.testing import assert_allclose

from lib.errors import UnsupportedOperationError
from lib.stencils import (
    StencilSpec,
    finite_diff_matrix,
    fourier_diff_matrix,
    match_trig_basis,
    smooth_basis_of,
    stencil_from_spec,
    trig_basis,
)


def _grid(m):
    return 2.0 * np.pi * np.arange(m) / m


class TestFourier:
    def test_differentiates_trig_polynomials(self):
        x = _grid(16)
        D = fourier_diff_matrix(16)
        assert_allclose(D @ np.sin(2 * x), 2 * np.cos(2 * x), atol=1e-10)
        assert_allclose(D @ np.cos(3 * x), -3 * np.sin(3 * x), atol=1e-10)

    def test_spectrum_of_dtd(self):
        D = fourier_diff_matrix(8)
        values = smooth_basis_of(D).values
        # Nyquist is annihilated along with the constant
        assert_allclose(values, [0, 0, 1, 1, 4, 4, 9, 9], atol=1e-9)

    def test_odd_size_rejected(self):
        with pytest.raises(UnsupportedOperationError):
            fourier_diff_matrix(7)
        with pytest.raises(UnsupportedOperationError):
            StencilSpec(kind="fourier", size=9)

    def test_trig_basis_diagonalizes(self):
        assert match_trig_basis(fourier_diff_matrix(12), trig_basis(12)) < 1e-12


class TestFiniteDifference:
    def test_periodic_first_order(self):
        m = 10
        D = finite_diff_matrix(StencilSpec(kind="finite-difference", size=m))
        assert D.shape == (m, m)
        assert_allclose(D @ np.ones(m), 0.0, atol=1e-14)
        expected = np.sort(2.0 - 2.0 * np.cos(2.0 * np.pi * np.arange(m) / m))
        assert_allclose(smooth_basis_of(D).values, expected, atol=1e-12)

    def test_one_sided_second_order(self):
        D = finite_diff_matrix(StencilSpec(kind="finite-difference", size=6, fd_order=2,
                                           fd_boundary="one-sided"))
        assert D.shape == (4, 6)
        assert_allclose(D[0], [1, -2, 1, 0, 0, 0])

    def test_order_three_rejected(self):
        with pytest.raises(UnsupportedOperationError):
            StencilSpec(kind="finite-difference", size=6, fd_order=3)

    def test_unknown_kind(self):
        with pytest.raises(UnsupportedOperationError):
            StencilSpec(kind="wavelet", size=8)


class TestSmoothBasis:
    def test_constant_first(self):
        m = 9
        D = stencil_from_spec(StencilSpec(kind="finite-difference", size=m))
        basis = smooth_basis_of(D)
        assert_allclose(basis.vectors[:, 0], np.full(m, 1.0 / np.sqrt(m)), atol=1e-12)
        assert_allclose(basis.vectors.T @ basis.vectors, np.eye(m), atol=1e-12)

    def test_deterministic(self):
        D = fourier_diff_matrix(16)
        assert_allclose(smooth_basis_of(D).vectors, smooth_basis_of(D.copy()).vectors, atol=1e-14)

    def test_with_size_keeps_kind(self):
        spec = StencilSpec(kind="finite-difference", size=8, fd_order=2).with_size(12)
        assert (spec.kind, spec.size, spec.fd_order) == ("finite-difference", 12, 2)

    def test_from_mapping_defaults(self):
        spec = StencilSpec.from_mapping({}, size=20)
        assert spec == StencilSpec(kind="fourier", size=20)


class TestTrigBasis:
    @pytest.mark.parametrize("m", [7, 8, 12])
    def test_orthonormal(self, m):
        T = trig_basis(m)
        assert_allclose(T.T @ T, np.eye(m), atol=1e-12)

    def test_even_size_ends_with_nyquist(self):
        T = trig_basis(8)
        assert_allclose(T[:, 7], (-1.0) ** np.arange(8) / np.sqrt(8), atol=1e-14)
        assert_allclose(T[:, 0], np.full(8, 1.0 / np.sqrt(8)), atol=1e-14)


class TestSmoothOrdering:
    @staticmethod
    def _projector(Q):
        return Q @ Q.T

    def test_fourier_modes_by_frequency(self):
        m = 8
        Q = smooth_basis_of(fourier_diff_matrix(m)).vectors
        T = trig_basis(m)
        for f in (1, 2, 3):
            # eigenvalue f^2 pairs sin/cos of frequency f
            assert_allclose(self._projector(Q[:, 2 * f: 2 * f + 2]),
                            self._projector(T[:, 2 * f - 1: 2 * f + 1]), atol=1e-10)

    def test_fourier_nyquist_shares_the_null_space(self):
        m = 8
        Q = smooth_basis_of(fourier_diff_matrix(m)).vectors
        assert_allclose(np.abs(Q[:, 0]), np.full(m, 1.0 / np.sqrt(m)), atol=1e-12)
        assert_allclose(np.abs(Q[:, 1]), np.full(m, 1.0 / np.sqrt(m)), atol=1e-12)
        assert_allclose(Q[:, 0] @ Q[:, 1], 0.0, atol=1e-12)

    def test_finite_difference_nyquist_is_roughest(self):
        m = 8
        Q = smooth_basis_of(stencil_from_spec(StencilSpec(kind="finite-difference", size=m))).vectors
        assert_allclose(np.abs(Q[:, -1]), np.full(m, 1.0 / np.sqrt(m)), atol=1e-12)
        assert_allclose(np.abs(Q[:, -1] @ trig_basis(m)[:, -1]), 1.0, atol=1e-12)
