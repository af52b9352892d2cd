import itertools

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from switchlyap.errors import IllConditionedSplit, InvalidInput
from switchlyap.linalg import (is_irreducible, matrix_exponential,
                               real_part_split, skew_shift_certificate,
                               spectral_abscissa, spectral_radius)

from conftest import ROT_A1, ROT_A2, random_skew

seeds = st.integers(0, 2**32 - 1)


def mp_expm(A, t):
    with mpmath.workdps(40):
        E = mpmath.expm(mpmath.matrix(A.tolist()) * t)
        return np.array(E.tolist(), dtype=float)


class TestExponential:
    def test_zero_matrix_gives_identity(self):
        assert np.array_equal(matrix_exponential(np.zeros((2, 2)), 7.0), np.eye(2))

    def test_diagonal(self):
        E = matrix_exponential(np.diag([0.0, -1.0]), 1.0)
        assert np.allclose(E, np.diag([1.0, np.exp(-1.0)]), rtol=1e-15, atol=0)

    def test_quarter_rotation(self):
        J = np.array([[0.0, -1.0], [1.0, 0.0]])
        assert np.allclose(matrix_exponential(J, np.pi / 2), J, atol=1e-15)

    def test_negative_time_inverts(self):
        A = np.array([[0.3, 2.0], [-1.0, 0.1]])
        assert np.allclose(matrix_exponential(A, -1.3) @ matrix_exponential(A, 1.3),
                           np.eye(2), atol=1e-13)

    @pytest.mark.parametrize("seed", range(12))
    def test_against_high_precision(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(2, 6))
        A = rng.standard_normal((d, d))
        t = float(rng.uniform(0.1, 50.0)) / np.linalg.norm(A, 2)
        ref = mp_expm(A, t)
        err = np.linalg.norm(matrix_exponential(A, t) - ref, 2) / np.linalg.norm(ref, 2)
        assert err <= 1e-12

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidInput):
            matrix_exponential(np.array([[np.nan, 0.0], [0.0, 1.0]]))
        with pytest.raises(InvalidInput):
            matrix_exponential(np.zeros((2, 3)))


class TestSpectra:
    def test_radius_examples(self):
        assert spectral_radius(np.diag([1.0, np.exp(-1)])) == pytest.approx(1.0, abs=1e-12)
        assert spectral_radius([[0.0, -1.0], [1.0, 0.0]]) == pytest.approx(1.0, abs=1e-12)

    def test_radius_planted_spectrum(self):
        rng = np.random.default_rng(1)
        D = np.zeros((4, 4))
        D[0, 0], D[1, 1] = 2.0, -3.0
        D[2:, 2:] = [[0.5, 1.0], [-1.0, 0.5]]
        T = rng.standard_normal((4, 4)) + 3 * np.eye(4)
        A = T @ D @ np.linalg.inv(T)
        assert abs(spectral_radius(A) - 3.0) <= 1e-10 * (1 + np.linalg.norm(A, 2))

    def test_abscissa_examples(self):
        rng = np.random.default_rng(2)
        K = random_skew(rng, 3)
        assert spectral_abscissa(np.diag([0.0, -1.0])) == 0.0
        assert abs(spectral_abscissa(K)) <= 1e-12
        assert spectral_abscissa(0.3 * np.eye(3) + K) == pytest.approx(0.3, abs=1e-12)

    @given(seeds, st.integers(1, 5), st.sampled_from([0.1, 1.0, 5.0]))
    def test_radius_of_exponential(self, seed, d, t):
        A = np.random.default_rng(seed).standard_normal((d, d))
        lhs = spectral_radius(matrix_exponential(A, t))
        assert lhs == pytest.approx(np.exp(spectral_abscissa(A) * t), rel=1e-6)


class TestRealPartSplit:
    def test_diagonal_two_groups(self):
        s = real_part_split(np.diag([0.0, -1.0]))
        assert s.xi.tolist() == [0.0, -1.0]
        assert abs(abs(s.bases[0][0, 0]) - 1) < 1e-12 and abs(s.bases[1][1, 0]) == pytest.approx(1)

    def test_rotation_single_group(self):
        s = real_part_split([[0.0, -1.0], [1.0, 0.0]])
        assert s.k == 1 and s.dims == [2]

    def test_repeated_real_part(self):
        s = real_part_split(np.diag([1.0, 1.0, -2.0]))
        assert s.k == 2 and s.dims == [2, 1]

    def test_ill_conditioned_rejected(self):
        A = np.array([[0.0, 1.0], [0.0, -1e-4]])
        with pytest.raises(IllConditionedSplit):
            real_part_split(A, max_cond=10.0)

    @given(seeds, st.integers(2, 5))
    def test_invariant_flags_and_projectors(self, seed, d):
        A = np.random.default_rng(seed).standard_normal((d, d))
        s = real_part_split(A)
        assert sum(s.dims) == d
        assert np.all(np.diff(s.xi) < 0)
        assert np.allclose(s.projectors[-1], np.eye(d))
        for j in range(s.k):
            P = s.projectors[j]
            assert np.allclose(P @ P, P, atol=1e-8 * np.linalg.norm(P, 2) ** 2)
            V = np.hstack(s.bases[: j + 1])
            Qo, _ = np.linalg.qr(V)
            leak = (np.eye(d) - Qo @ Qo.T) @ A @ Qo
            assert np.linalg.norm(leak, 2) <= 1e-8 * (1 + np.linalg.norm(A, 2))


def _span_rank(mats, length):
    d = mats[0].shape[0]
    words = [np.eye(d)]
    for L in range(1, length + 1):
        for w in itertools.product(mats, repeat=L):
            words.append(np.linalg.multi_dot(w) if L > 1 else w[0])
    return np.linalg.matrix_rank(np.array([w.ravel() for w in words]), tol=1e-9)


class TestIrreducible:
    def test_rotation_pair(self):
        assert _span_rank([ROT_A1, ROT_A2], 3) == 4
        assert is_irreducible([ROT_A1, ROT_A2])

    def test_upper_triangular(self):
        assert not is_irreducible([np.triu(np.ones((3, 3))), np.triu(np.arange(9.0).reshape(3, 3))])

    def test_single_diagonal(self):
        assert not is_irreducible([np.diag([1.0, 2.0])])

    def test_lone_rotation_is_not_absolutely_irreducible(self):
        assert not is_irreducible([[[0.0, -1.0], [1.0, 0.0]]])

    @given(seeds, st.integers(2, 4), st.booleans())
    def test_similarity_invariance(self, seed, d, reducible):
        rng = np.random.default_rng(seed)
        mats = [rng.standard_normal((d, d)) for _ in range(2)]
        if reducible:
            mats = [np.triu(m) for m in mats]
        T = rng.standard_normal((d, d)) + 2 * np.eye(d)
        Ti = np.linalg.inv(T)
        assert is_irreducible(mats) == is_irreducible([T @ m @ Ti for m in mats])


class TestSkewShiftCertificate:
    def test_constructed_instance(self):
        rng = np.random.default_rng(5)
        T = rng.standard_normal((3, 3)) + 2 * np.eye(3)
        Ti = np.linalg.inv(T)
        mats = [0.3 * np.eye(3) + T @ random_skew(rng, 3) @ Ti for _ in range(3)]
        c, Q = skew_shift_certificate(mats)
        assert c == pytest.approx(0.3, abs=1e-12)
        assert np.all(np.linalg.eigvalsh(Q) > 0)
        for A in mats:
            B = A - c * np.eye(3)
            assert np.linalg.norm(Q @ B + B.T @ Q) <= 1e-8

    def test_symmetric_mode_refused(self):
        assert skew_shift_certificate([np.diag([0.0, -1.0])]) is None

    def test_trace_mismatch_refused(self):
        assert skew_shift_certificate([np.zeros((2, 2)), np.eye(2)]) is None

    def test_rotation(self):
        c, Q = skew_shift_certificate([[[0.0, -1.0], [1.0, 0.0]]])
        assert c == 0.0 and np.allclose(Q, np.eye(2))

    @given(seeds, st.integers(2, 4), st.integers(1, 3), st.floats(-1, 1))
    def test_accepted_products_have_exact_growth(self, seed, d, N, c):
        rng = np.random.default_rng(seed)
        T = np.eye(d) + 0.3 * rng.standard_normal((d, d))
        Ti = np.linalg.inv(T)
        mats = [c * np.eye(d) + T @ random_skew(rng, d) @ Ti for _ in range(N)]
        cert = skew_shift_certificate(mats)
        assert cert is not None
        for _ in range(20):
            k = int(rng.integers(1, 6))
            idx, ts = rng.integers(0, N, k), rng.uniform(0, 2, k)
            Phi = np.eye(d)
            for i, t in zip(idx, ts):
                Phi = matrix_exponential(mats[i], t) @ Phi
            ref = np.exp(cert[0] * ts.sum())
            assert abs(spectral_radius(Phi) - ref) <= 1e-6 * ref
