import numpy as np
import pytest
from hypothesis import given, strategies as st

from switchlyap.ctmc import MarkovParams
from switchlyap.detlyap import BracketConfig, lambda_d_bracket
from switchlyap.errors import DegenerateSplit, InvalidInput
from switchlyap.flows import SwitchedSystem
from switchlyap.pdmp import (ConvexifiedProcess, coupled_convergence_experiment,
                             lambda_p_by_classes, lambda_p_conv_search,
                             lambda_p_estimate, lambda_p_samples, mu_scan,
                             sphere_occupation, two_timescale_rates,
                             wilson_interval)

SINGLE = MarkovParams([1.0], 1.0, [[1.0]])
HALF = MarkovParams([0.5, 0.5], 1.0, [[0.5, 0.5], [0.5, 0.5]])


class TestConvexified:
    def test_modes_are_weighted_averages(self, rot_pair):
        conv = ConvexifiedProcess.build(rot_pair, [[0, 1]], [[0.25, 0.75]], SINGLE)
        assert np.allclose(conv.modes[0], 0.25 * rot_pair.modes[0] + 0.75 * rot_pair.modes[1])
        assert conv.k == 1 and conv.system().N == 1

    @pytest.mark.parametrize("sets, weights", [
        ([[0, 1], [1]], [[0.5, 0.5], [1.0]]),
        ([[0], [1]], [[0.5], [1.0]]),
        ([[0], [2]], [[1.0], [1.0]]),
        ([[0], []], [[1.0], []]),
    ])
    def test_rejects_bad_structure(self, rot_pair, sets, weights):
        with pytest.raises(InvalidInput):
            ConvexifiedProcess.build(rot_pair, sets, weights, HALF)

    def test_chain_size_must_match(self, rot_pair):
        with pytest.raises(InvalidInput):
            ConvexifiedProcess.build(rot_pair, [[0, 1]], [[0.5, 0.5]], HALF)


class TestEstimate:
    def test_normal_single_mode_is_exact(self):
        A = np.array([[-0.5, 2.0], [-2.0, -0.5]])
        est = lambda_p_estimate(SwitchedSystem([A]), SINGLE, 40.0, 8, seed=1)
        assert est.value == pytest.approx(-0.5, abs=1e-12) and est.stderr <= 1e-12

    def test_shifted_skew(self):
        rng = np.random.default_rng(0)
        S = rng.standard_normal((3, 3))
        A = 0.3 * np.eye(3) + S - S.T
        est = lambda_p_estimate(SwitchedSystem([A]), SINGLE, 30.0, 4)
        assert est.value == pytest.approx(0.3, abs=1e-8)

    def test_argument_checks(self, rot_pair):
        with pytest.raises(InvalidInput):
            lambda_p_estimate(rot_pair, HALF, 10.0, 1)
        with pytest.raises(InvalidInput):
            lambda_p_estimate(rot_pair, HALF, 0.0, 4)
        with pytest.raises(InvalidInput):
            lambda_p_estimate(rot_pair, SINGLE, 10.0, 4)

    def test_thread_count_does_not_matter(self, rot_pair):
        a = lambda_p_samples(rot_pair, HALF, 20.0, 12, seed=5, threads=1)
        b = lambda_p_samples(rot_pair, HALF, 20.0, 12, seed=5, threads=4)
        assert np.array_equal(a, b)

    @given(st.floats(-3, 3), st.integers(0, 1000))
    def test_shift_equivariance(self, c, seed):
        rng = np.random.default_rng(seed)
        sys = SwitchedSystem([rng.standard_normal((2, 2)) for _ in range(2)])
        e0 = lambda_p_estimate(sys, HALF, 10.0, 4, seed=seed)
        e1 = lambda_p_estimate(sys.shifted(c), HALF, 10.0, 4, seed=seed)
        assert e1.value - e0.value == pytest.approx(c, abs=1e-10)

    def test_not_above_deterministic_upper(self, rot_pair):
        T = 100.0
        est = lambda_p_estimate(rot_pair, HALF, T, 50, seed=2)
        br = lambda_d_bracket(rot_pair, BracketConfig())
        assert est.value <= br.upper + 3 * est.stderr + 2 * rot_pair.K / T


class TestByClasses:
    def test_scalar_absorption_weights(self):
        sys = SwitchedSystem([[[-1.0]], [[-2.0]], [[-3.0]]])
        P = [[1, 0, 0], [0, 1, 0], [0.3, 0.2, 0.5]]
        est = lambda_p_by_classes(sys, MarkovParams([0, 0, 1], 1.0, P), 10.0, 4)
        # absorption probabilities from state 3 are 0.6 and 0.4
        assert est.value == pytest.approx(-0.6 - 0.8, abs=1e-12)
        assert est.stderr <= 1e-12

    def test_single_class_matches_direct(self, rot_pair):
        P = np.array([[0.2, 0.8], [0.6, 0.4]])
        nu = np.array([0.6, 0.8]) / 1.4
        params = MarkovParams(nu, 2.0, P)
        a = lambda_p_by_classes(rot_pair, params, 20.0, 10, seed=3)
        b = lambda_p_estimate(rot_pair, params, 20.0, 10, seed=3)
        assert a.value == pytest.approx(b.value, abs=1e-13)


class TestTwoTimescale:
    def test_one_class(self, rot_pair):
        conv = ConvexifiedProcess.build(rot_pair, [[0, 1]], [[0.5, 0.5]], SINGLE)
        assert np.allclose(two_timescale_rates(conv, 8.0), 4.0)

    def test_singletons_give_macro_chain(self, rot_pair):
        chain = MarkovParams([0.5, 0.5], 2.0, [[0.0, 1.0], [1.0, 0.0]])
        conv = ConvexifiedProcess.build(rot_pair, [[0], [1]], [[1.0], [1.0]], chain)
        R = two_timescale_rates(conv, 50.0)
        assert R[0, 1] == pytest.approx(2.0) and R[1, 0] == pytest.approx(2.0)

    def test_rejects_nonpositive_rate(self, rot_pair):
        conv = ConvexifiedProcess.build(rot_pair, [[0, 1]], [[0.5, 0.5]], SINGLE)
        with pytest.raises(InvalidInput):
            two_timescale_rates(conv, 0.0)


class TestCoupled:
    def test_singletons_never_separate(self, rot_pair):
        chain = MarkovParams([0.5, 0.5], 1.0, [[0.0, 1.0], [1.0, 0.0]])
        conv = ConvexifiedProcess.build(rot_pair, [[0], [1]], [[1.0], [1.0]], chain)
        table = coupled_convergence_experiment(rot_pair, conv, [0.0, 1.0], 2.0,
                                               [1, 10], 20, 1e-9, seed=0)
        assert all(r["exceedances"] == 0 for r in table)

    def test_huge_threshold(self, rot_pair):
        conv = ConvexifiedProcess.build(rot_pair, [[0, 1]], [[0.5, 0.5]], SINGLE)
        table = coupled_convergence_experiment(rot_pair, conv, [0.0, 1.0], 2.0,
                                               [1, 10], 20, 1e6, seed=0)
        assert all(r["frequency"] == 0 and r["wilson_low"] == 0 for r in table)

    def test_threads_and_validation(self, rot_pair):
        conv = ConvexifiedProcess.build(rot_pair, [[0, 1]], [[0.5, 0.5]], SINGLE)
        args = (rot_pair, conv, [0.0, 1.0], 2.0, [1, 10], 16, 0.1)
        assert coupled_convergence_experiment(*args, seed=4) == \
            coupled_convergence_experiment(*args, seed=4, threads=3)
        with pytest.raises(InvalidInput):
            coupled_convergence_experiment(rot_pair, conv, [0.0, 1.0], 2.0, [10, 1], 4, 0.1)
        with pytest.raises(InvalidInput):
            coupled_convergence_experiment(rot_pair, conv, [1.0], 2.0, [1], 4, 0.1)


@given(st.integers(0, 200), st.integers(1, 200))
def test_wilson_interval(successes, trials):
    successes = min(successes, trials)
    lo, hi = wilson_interval(successes, trials)
    assert 0 <= lo <= successes / trials <= hi <= 1
    assert (lo == 0) == (successes == 0) and (hi == 1) == (successes == trials)


class TestScans:
    def test_equal_modes_constant(self):
        A = np.array([[-1.0, 1.0], [-1.0, -1.0]])
        ests = mu_scan(SwitchedSystem([A, A]), [0.5, 0.5], [1, 100], 20.0, 3)
        assert all(e.value == pytest.approx(-1.0, abs=1e-12) for e in ests)

    def test_commuting_diagonals_approach_average(self):
        sys = SwitchedSystem([np.diag([-1.0, -3.0]), np.diag([-3.0, -1.0])])
        ests = mu_scan(sys, [0.5, 0.5], [1, 1000], 50.0, [20, 10], seed=1)
        assert ests[0].value > ests[1].value >= -2.0 - 1e-12
        assert ests[1].value == pytest.approx(-2.0, abs=0.02)
        with pytest.raises(InvalidInput):
            mu_scan(sys, [0.5, 0.5], [1, 10], 5.0, [3])

    def test_sphere_single_mode(self):
        sys = SwitchedSystem([np.diag([0.0, -1.0])])
        assert sphere_occupation(sys, [1.0], 1.0, 100.0, 0.1) == 1.0

    def test_sphere_needs_two_real_parts(self, rot_pair):
        rot = SwitchedSystem([[[0.0, 1.0], [-1.0, 0.0]]])
        with pytest.raises(DegenerateSplit):
            sphere_occupation(rot, [1.0], 1.0, 10.0, 0.1)

    def test_conv_search_never_below_hull(self, rot_pair):
        out = lambda_p_conv_search(rot_pair, 0.0, [0.5, 0.5], candidates=3,
                                   T=20.0, n_traj=4)
        assert out["value"] >= 0.0
        one = lambda_p_conv_search(SwitchedSystem([np.eye(2)]), 1.0, [1.0])
        assert one == {"value": 1.0, "source": "hull", "weights": [1.0]}
