import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from factorlab.linalg import (SIGN_ZERO_TOL, LinalgError, RankPolicy, masked_frobenius, nuclear_norm, numerical_rank,
                              principal_angles, singular_values, svd, symmetric_eigen)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def square(max_d=6):
    return st.integers(1, max_d).flatmap(lambda d: arrays(np.float64, (d, d), elements=finite))


def random_orthogonal(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


class TestSvd:
    def test_identity(self):
        np.testing.assert_allclose(singular_values(np.eye(3)), [1, 1, 1])

    def test_closed_form_2x2(self):
        assert nuclear_norm([[1, 2], [3, 4]]) == pytest.approx(np.sqrt(34), abs=1e-10)

    def test_diag_with_zero(self):
        np.testing.assert_allclose(singular_values(np.diag([3.0, 0.0])), [3, 0])

    def test_rejects_nonfinite(self):
        with pytest.raises(LinalgError):
            svd([[1.0, np.nan], [0, 1]])

    @given(square(16))
    def test_round_trip_and_orthonormality(self, m):
        res = svd(m)
        scale = max(np.linalg.norm(m), 1e-300)
        assert np.linalg.norm(res.reconstruct() - m) <= 1e-10 * scale + 1e-300
        d = m.shape[0]
        np.testing.assert_allclose(res.left_vectors.T @ res.left_vectors, np.eye(d), atol=1e-10)
        np.testing.assert_allclose(res.right_vectors.T @ res.right_vectors, np.eye(d), atol=1e-10)
        assert np.all(np.diff(res.singular_values) <= 0)

    @given(square(6))
    def test_sign_convention(self, m):
        res = svd(m)
        for k in range(m.shape[0]):
            u = res.left_vectors[:, k]
            first = u[np.abs(u) > SIGN_ZERO_TOL]
            if first.size:
                assert first[0] > 0

    def test_sign_convention_is_deterministic(self, rng):
        m = rng.standard_normal((5, 5))
        a, b = svd(m), svd(m.copy())
        np.testing.assert_array_equal(a.left_vectors, b.left_vectors)


class TestEigen:
    def test_diag(self):
        lam, _ = symmetric_eigen(np.diag([2.0, -1.0]))
        np.testing.assert_allclose(lam, [2, -1])

    def test_antidiagonal(self):
        lam, _ = symmetric_eigen([[0, -2], [-2, 0]])
        np.testing.assert_allclose(lam, [2, -2])

    def test_rejects_asymmetric(self):
        with pytest.raises(LinalgError):
            symmetric_eigen([[0, 1], [0.5, 0]])

    @given(square(6))
    def test_residual(self, m):
        h = m + m.T
        lam, vec = symmetric_eigen(h)
        scale = max(np.linalg.norm(h), 1.0)
        assert np.linalg.norm(h @ vec - vec * lam) <= 1e-8 * scale
        assert np.all(np.diff(lam) <= 0)

    def test_block_antidiagonal_spectrum(self, rng):
        for _ in range(20):
            d = rng.integers(1, 6)
            x = rng.standard_normal((d, d))
            h = np.block([[np.zeros((d, d)), -x], [-x.T, np.zeros((d, d))]])
            lam, _ = symmetric_eigen(h)
            s = np.linalg.svd(x, compute_uv=False)
            np.testing.assert_allclose(lam, np.sort(np.concatenate([s, -s]))[::-1], atol=1e-8)


class TestNormsAndRank:
    def test_nuclear_examples(self):
        assert nuclear_norm(np.diag([2.0, -3.0])) == pytest.approx(5)
        assert nuclear_norm(np.zeros((3, 3))) == 0

    @given(arrays(np.float64, (2, 2), elements=finite))
    def test_nuclear_2x2_closed_form(self, m):
        expected = np.sqrt(np.sum(m ** 2) + 2 * abs(np.linalg.det(m)))
        assert nuclear_norm(m) == pytest.approx(expected, rel=1e-10, abs=1e-10)

    def test_unitary_invariance(self, rng):
        for _ in range(20):
            d = rng.integers(1, 8)
            m = rng.standard_normal((d, d))
            q1, q2 = random_orthogonal(rng, d), random_orthogonal(rng, d)
            assert nuclear_norm(q1 @ m @ q2) == pytest.approx(nuclear_norm(m), rel=1e-10)

    def test_numerical_rank(self):
        assert numerical_rank(np.diag([3, 2, 1e-12])) == 2
        assert numerical_rank(np.zeros((3, 3))) == 0

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            RankPolicy(0.0, 1e-8)
        with pytest.raises(ValueError):
            RankPolicy(1e-4, -1.0)

    def test_policy_ties_resolve_down(self):
        assert RankPolicy(0.5, 1e-8).count([2.0, 1.0]) == 1

    def test_masked_frobenius(self):
        m = np.array([[1.0, 2], [3, 4]])
        assert masked_frobenius(m, np.ones((2, 2))) == pytest.approx(np.linalg.norm(m))
        assert masked_frobenius(m, np.zeros((2, 2))) == 0
        assert masked_frobenius(m, np.eye(2)) == pytest.approx(np.sqrt(17))
        with pytest.raises(LinalgError):
            masked_frobenius(m, np.ones((3, 3)))


class TestPrincipalAngles:
    def test_examples(self):
        np.testing.assert_allclose(principal_angles(np.eye(3)[:, :2], np.eye(3)[:, :2]), 0, atol=1e-12)
        np.testing.assert_allclose(principal_angles([[1], [0]], [[0], [1]]), [np.pi / 2])
        np.testing.assert_allclose(principal_angles([[1], [1]], [[1], [0]]), [np.pi / 4])

    def test_rejects_dependent(self):
        with pytest.raises(LinalgError):
            principal_angles([[1, 2], [1, 2]], [[1], [0]])

    def test_small_angle_accuracy(self):
        t = 1e-9
        ang = principal_angles([[1], [0]], [[np.cos(t)], [np.sin(t)]])
        assert ang[0] == pytest.approx(t, rel=1e-6)
