import numpy as np
import pytest
from hypothesis import given, strategies as st

from switchlyap.errors import InvalidInput, InvalidSignal
from switchlyap.flows import (Signal, SwitchedSystem, flow,
                              growth_envelope_check, log_flow_norm,
                              log_spectral_radius_of_flow)
from switchlyap.linalg import matrix_exponential

seeds = st.integers(0, 2**32 - 1)


def random_case(seed, d=None, N=None, n_seg=6):
    rng = np.random.default_rng(seed)
    d = d or int(rng.integers(1, 5))
    N = N or int(rng.integers(1, 4))
    sys = SwitchedSystem([rng.standard_normal((d, d)) for _ in range(N)])
    sig = Signal(rng.uniform(0, 1, n_seg), rng.integers(0, N, n_seg))
    return rng, sys, sig


class TestTypes:
    def test_operator_norm_bound(self):
        mats = [np.diag([1.0, -3.0]), [[0.0, 2.0], [0.0, 0.0]]]
        assert SwitchedSystem(mats).K == pytest.approx(3.0, abs=1e-10)

    def test_rejects_bad_modes(self):
        with pytest.raises(InvalidInput):
            SwitchedSystem([])
        with pytest.raises(InvalidInput):
            SwitchedSystem([np.eye(2), np.eye(3)])
        with pytest.raises(InvalidInput):
            SwitchedSystem([[[np.inf, 0], [0, 0]]])

    def test_rejects_bad_signals(self):
        with pytest.raises(InvalidSignal):
            Signal([], [])
        with pytest.raises(InvalidSignal):
            Signal([-1.0], [0])
        with pytest.raises(InvalidSignal):
            Signal([np.nan], [0])

    def test_modes_out_of_range(self):
        sys = SwitchedSystem([np.eye(2)])
        with pytest.raises(InvalidSignal):
            flow(sys, Signal([1.0], [1]))

    def test_segments_and_truncation(self):
        sig = Signal.from_segments([(1.0, 0), (2.0, 1)])
        assert sig.total_time == 3.0
        assert sig.truncated(1.5).segments == [(1.0, 0), (0.5, 1)]


class TestFlow:
    def test_single_segment(self):
        A = np.array([[0.1, 1.0], [-2.0, 0.3]])
        assert np.allclose(flow(SwitchedSystem([A]), Signal([0.7], [0])),
                           matrix_exponential(A, 0.7), rtol=1e-14)

    def test_zero_durations(self):
        _, sys, _ = random_case(3, 3, 2)
        assert np.array_equal(flow(sys, Signal([0.0, 0.0], [0, 1])), np.eye(3))

    def test_commuting_diagonals(self):
        sys = SwitchedSystem([np.diag([1.0, 2.0]), np.diag([3.0, 4.0])])
        F = flow(sys, Signal([1.0, 2.0], [0, 1]))
        assert np.allclose(F, np.diag([np.exp(7.0), np.exp(10.0)]), rtol=1e-13, atol=0)

    def test_order_is_right_to_left(self):
        A, B = np.array([[0, 1.0], [0, 0]]), np.array([[0, 0], [1.0, 0]])
        F = flow(SwitchedSystem([A, B]), Signal([1.0, 1.0], [0, 1]))
        assert np.allclose(F, matrix_exponential(B) @ matrix_exponential(A))


class TestLogNorm:
    def test_zero_duration(self):
        _, sys, _ = random_case(1, 2, 2)
        assert log_flow_norm(sys, Signal([0.0], [1])) == 0.0

    def test_scalar_multiple_of_identity(self):
        sys = SwitchedSystem([0.7 * np.eye(3)])
        assert log_flow_norm(sys, Signal([2.0, 3.0], [0, 0])) == pytest.approx(3.5, rel=1e-14)

    def test_no_overflow(self):
        sys = SwitchedSystem([np.diag([100.0, 0.0]), np.diag([0.0, 100.0])])
        sig = Signal(np.full(100, 1.0), np.zeros(100, dtype=int))
        assert log_flow_norm(sys, sig) == pytest.approx(1e4, rel=1e-12)
        assert log_spectral_radius_of_flow(sys, sig) == pytest.approx(1e4, rel=1e-12)

    def test_rotation_pair_contracts(self, rot_pair):
        rng = np.random.default_rng(0)
        for _ in range(20):
            du = rng.uniform(0.01, 1, 40)
            sig = Signal(du * 10 / du.sum(), rng.integers(0, 2, 40))
            assert log_flow_norm(rot_pair, sig) < 0


class TestEnvelope:
    def test_zero_increment(self):
        _, sys, sig = random_case(4)
        assert growth_envelope_check(sys, sig, 0.0, 0.5)

    def test_identity_multiple(self):
        sys = SwitchedSystem([-2.0 * np.eye(2)])
        assert growth_envelope_check(sys, Signal([3.0], [0]), 1.0, 1.5)

    def test_outside_span(self):
        _, sys, sig = random_case(5)
        with pytest.raises(InvalidInput):
            growth_envelope_check(sys, sig, sig.total_time, 0.1)
        with pytest.raises(InvalidInput):
            growth_envelope_check(sys, sig, -0.1, 0.1)

    def test_random_sweep(self):
        rng = np.random.default_rng(11)
        for k in range(200):
            _, sys, sig = random_case(k)
            s, e = sorted(rng.uniform(0, sig.total_time, 2))
            assert growth_envelope_check(sys, sig, e - s, s)


@given(seeds)
def test_cocycle(seed):
    rng, sys, s1 = random_case(seed)
    s2 = Signal(rng.uniform(0, 1, 3), rng.integers(0, sys.N, 3))
    F = flow(sys, s1 + s2)
    assert np.allclose(F, flow(sys, s2) @ flow(sys, s1),
                       rtol=1e-9, atol=1e-9 * np.max(np.abs(F)))


@given(seeds)
def test_determinant_identity(seed):
    _, sys, sig = random_case(seed)
    tr = sum(t * np.trace(sys.modes[i]) for t, i in sig.segments)
    assert np.linalg.det(flow(sys, sig)) == pytest.approx(np.exp(tr), rel=1e-8)


@given(seeds, st.floats(-2, 2))
def test_shift_equivariance(seed, c):
    _, sys, sig = random_case(seed)
    F0, F1 = flow(sys, sig), flow(sys.shifted(c), sig)
    scale = np.exp(c * sig.total_time)
    big = np.abs(F0) > 1e-6 * np.max(np.abs(F0))
    assert np.allclose(F1[big], scale * F0[big], rtol=1e-10, atol=0)
