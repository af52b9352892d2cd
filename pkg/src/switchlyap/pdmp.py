"""Markov-switched linear systems.

Monte Carlo estimates of probabilistic Lyapunov exponents, convexified
processes, the fast-resampling chain that approximates a convexified
process, and experiments on the angular process.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from . import _kernels
from .ctmc import MarkovParams, chain_chunks, simulate_chain, stationary_structure, stream
from .errors import DegenerateSplit, InvalidInput
from .flows import SwitchedSystem
from .linalg import real_part_split, spectral_abscissa

log = logging.getLogger(__name__)

WILSON_Z = 1.959963984540054


@dataclass(frozen=True)
class ConvexifiedProcess:
    """Markov switching among averaged modes ``B_r``.

    ``index_sets`` are disjoint 0-based index sets of the original modes,
    ``weights[r]`` a probability vector aligned with ``index_sets[r]`` and
    ``chain`` the macro chain on ``range(k)``.
    """

    index_sets: List[np.ndarray]
    weights: List[np.ndarray]
    modes: np.ndarray
    chain: MarkovParams

    @classmethod
    def build(cls, sys: SwitchedSystem, index_sets, weights,
              chain: MarkovParams) -> "ConvexifiedProcess":
        sets = [np.asarray(s, dtype=np.int64) for s in index_sets]
        ws = [np.asarray(w, dtype=float) for w in weights]
        if not sets or len(sets) != len(ws) or chain.N != len(sets):
            raise InvalidInput("index sets, weights and chain size disagree")
        flat = np.concatenate(sets)
        if np.unique(flat).size != flat.size or any(s.size == 0 for s in sets):
            raise InvalidInput("index sets must be nonempty and disjoint")
        if flat.min() < 0 or flat.max() >= sys.N:
            raise InvalidInput("index set refers to a missing mode")
        for s, w in zip(sets, ws):
            if w.shape != s.shape or np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
                raise InvalidInput("weights must be probability vectors "
                                   "aligned with their index sets")
        B = np.array([np.tensordot(w, sys.modes[s], 1) for s, w in zip(sets, ws)])
        return cls(sets, ws, B, chain)

    @property
    def k(self) -> int:
        return len(self.index_sets)

    def system(self) -> SwitchedSystem:
        return SwitchedSystem(self.modes)


@dataclass(frozen=True)
class LyapunovEstimate:
    """Mean of ``(1/T) log |Phi(T)|`` over trajectories.

    For an invariant initial law the finite-``T`` mean is biased upward by
    at most ``O(1/T)``.
    """

    value: float
    stderr: float
    T: float
    n_traj: int
    seed: int
    bias: str = "upward O(1/T) for invariant starts"


def _map(fn: Callable[[int], float], ks: Sequence[int], threads: int) -> np.ndarray:
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            out = list(ex.map(fn, ks))
    else:
        out = [fn(k) for k in ks]
    return np.array(out, dtype=float)


def _trajectory_log_norm(modes, params, T, rng, first=None) -> float:
    d = modes.shape[1]
    phi, ls = np.eye(d), 0.0
    for states, durs in chain_chunks(params, T, rng, first):
        phi, ls = _kernels.propagate_flow_from(modes, states, durs, phi, ls)
    s = np.linalg.norm(phi, 2)
    return float(np.log(s) + ls) if s > 0 else -np.inf


def lambda_p_samples(sys: SwitchedSystem, params: MarkovParams, T: float,
                     n_traj: int, seed: int = 0, threads: int = 1,
                     offset: int = 0) -> np.ndarray:
    """Per-trajectory values of ``(1/T) log |Phi(T)|`` (streams offset+k)."""
    if params.N != sys.N:
        raise InvalidInput("Markov chain and system disagree on N")
    if not T > 0:
        raise InvalidInput("T must be positive")
    modes = sys.modes

    def one(k):
        return _trajectory_log_norm(modes, params, T, stream(seed, offset + k)) / T

    return _map(one, range(n_traj), threads)


def lambda_p_estimate(sys: SwitchedSystem, params: MarkovParams, T: float,
                      n_traj: int, seed: int = 0, threads: int = 1,
                      offset: int = 0) -> LyapunovEstimate:
    """Monte Carlo estimate of the probabilistic Lyapunov exponent."""
    if n_traj < 2:
        raise InvalidInput("need at least two trajectories")
    vals = lambda_p_samples(sys, params, T, n_traj, seed, threads, offset)
    return LyapunovEstimate(float(np.mean(vals)),
                            float(np.std(vals, ddof=1) / np.sqrt(n_traj)),
                            float(T), int(n_traj), int(seed))


def lambda_p_by_classes(sys: SwitchedSystem, params: MarkovParams, T: float,
                        n_traj: int, seed: int = 0,
                        threads: int = 1) -> LyapunovEstimate:
    """Absorption-weighted sum of per-class estimates from invariant starts.

    Class ``i`` uses streams ``(seed, i * 2**32 + k)``, so a single class
    started from its invariant law reproduces :func:`lambda_p_estimate`.
    """
    st = stationary_structure(params)
    total, var = 0.0, 0.0
    for i, (cls, inv) in enumerate(zip(st.classes, st.class_invariants)):
        a = float(st.alphas[i])
        if a <= 0:
            continue
        nu = np.zeros(params.N)
        nu[cls] = inv
        nu /= nu.sum()
        est = lambda_p_estimate(sys, MarkovParams(nu, params.mu, params.P),
                                T, n_traj, seed, threads, i << 32)
        total += a * est.value
        var += (a * est.stderr) ** 2
    return LyapunovEstimate(total, float(np.sqrt(var)), float(T),
                            int(n_traj), int(seed))


def two_timescale_chain(conv: ConvexifiedProcess, n: float,
                        N: Optional[int] = None) -> MarkovParams:
    """Chain on the original states that resamples within classes at rate n.

    Rates: ``n pi_r(j)`` inside ``I_r``; ``mu pi_s(j) P(r, s)`` from ``I_r``
    to ``I_s`` for ``s != r``; states outside every ``I_r`` are isolated.
    The returned clock is ``n + mu * max_r (1 - P(r, r))``.
    """
    if not n > 0:
        raise InvalidInput("n must be positive")
    if N is None:
        N = int(max(s.max() for s in conv.index_sets)) + 1
    ch = conv.chain
    rates = np.zeros((N, N))
    for r, (Ir, wr) in enumerate(zip(conv.index_sets, conv.weights)):
        rates[np.ix_(Ir, Ir)] += n * wr[None, :]
        for s, (Is, ws) in enumerate(zip(conv.index_sets, conv.weights)):
            if s != r and ch.P[r, s] > 0:
                rates[np.ix_(Ir, Is)] += ch.mu * ch.P[r, s] * ws[None, :]
    clock = n + ch.mu * float(np.max(1 - np.diag(ch.P)))
    P = rates / clock
    np.fill_diagonal(P, 0.0)
    P[np.diag_indices(N)] = 1 - P.sum(axis=1)
    nu = np.zeros(N)
    for r, (Ir, wr) in enumerate(zip(conv.index_sets, conv.weights)):
        nu[Ir] += ch.nu[r] * wr
    return MarkovParams(nu, clock, P)


def two_timescale_rates(conv: ConvexifiedProcess, n: float,
                        N: Optional[int] = None) -> np.ndarray:
    """Rate table of :func:`two_timescale_chain`, trivial resampling included."""
    p = two_timescale_chain(conv, n, N)
    return p.mu * p.P


def wilson_interval(successes: int, trials: int, z: float = WILSON_Z):
    """Wilson score interval for a binomial proportion."""
    if trials == 0:
        return 0.0, 1.0
    p = successes / trials
    den = 1 + z * z / trials
    mid = (p + z * z / (2 * trials)) / den
    half = z * np.sqrt(p * (1 - p) / trials + z * z / (4 * trials ** 2)) / den
    lo = 0.0 if successes == 0 else max(0.0, mid - half)
    hi = 1.0 if successes == trials else min(1.0, mid + half)
    return float(lo), float(hi)


def _slow_path(chain: MarkovParams, T: float, rng):
    """Macro path with trivial jumps removed: (jump times, states)."""
    leave, law = chain.effective_rates()
    c = np.cumsum(chain.nu)
    r = int(min(np.searchsorted(c, rng.random() * c[-1], side="right"),
                chain.N - 1))
    times, states = [0.0], [r]
    t = 0.0
    while leave[r] > 0:
        t += rng.standard_exponential() / leave[r]
        u = rng.random()
        if t >= T:
            break
        cl = np.cumsum(law[r])
        r = int(min(np.searchsorted(cl, u * cl[-1], side="right"), chain.N - 1))
        times.append(t)
        states.append(r)
    return np.array(times), np.array(states, dtype=np.int64)


def _coupled_one(conv: ConvexifiedProcess, sys_modes, x0, T, n_list, delta,
                 rng, max_step) -> List[bool]:
    slow_t, slow_s = _slow_path(conv.chain, T, rng)
    horizon = max(n_list) * T
    arrivals = []
    t = 0.0
    while True:
        gaps = rng.standard_exponential(4096)
        block = t + np.cumsum(gaps)
        arrivals.append(block[block <= horizon])
        if block[-1] > horizon:
            break
        t = float(block[-1])
    arrivals = np.concatenate(arrivals)
    rows = arrivals.size + slow_t.size + 1
    u = rng.random((rows, conv.k))
    table = np.empty((rows, conv.k), dtype=np.int64)
    for r, (Ir, wr) in enumerate(zip(conv.index_sets, conv.weights)):
        c = np.cumsum(wr)
        idx = np.minimum(np.searchsorted(c, u[:, r] * c[-1], side="right"),
                         Ir.size - 1)
        table[:, r] = Ir[idx]
    out = []
    for n in n_list:
        fast = arrivals[arrivals <= n * T] / n
        cuts = np.union1d(np.concatenate([slow_t, fast]), [0.0])
        cuts = cuts[cuts < T]
        dts = np.diff(np.append(cuts, T))
        r_idx = slow_s[np.searchsorted(slow_t, cuts, side="right") - 1]
        m = (np.searchsorted(fast, cuts, side="right")
             + np.searchsorted(slow_t, cuts, side="right") - 1)
        f_idx = table[m, r_idx]
        sup = _kernels.coupled_sup(conv.modes, sys_modes, dts, r_idx, f_idx,
                                   x0, max_step)
        out.append(sup > delta)
    return out


def coupled_convergence_experiment(sys: SwitchedSystem, conv: ConvexifiedProcess,
                                   x0, T: float, n_list: Sequence[float],
                                   n_traj: int, delta: float, seed: int = 0,
                                   threads: int = 1, max_step: float = 0.01
                                   ) -> List[Dict[str, float]]:
    """Exceedance frequencies of ``sup_t |x(t) - x_n(t)| > delta``.

    The slow chain, a unit Poisson process ``N`` and a table ``U[p, r]`` of
    draws from ``pi_r`` are shared by every ``n``.  The fast chain is
    ``U[N(nt) + #slow jumps up to t, sigma(t)]``.  Both solutions use
    exact exponentials on the merged timeline, subdivided to ``max_step``
    for the supremum.
    """
    if not delta > 0:
        raise InvalidInput("delta must be positive")
    n_list = [float(n) for n in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise InvalidInput("n_list must be increasing")
    x0 = np.ascontiguousarray(np.asarray(x0, dtype=float))
    if x0.shape != (sys.d,):
        raise InvalidInput("x0 has the wrong dimension")

    def one(k):
        return _coupled_one(conv, sys.modes, x0, T, n_list, delta,
                            stream(seed, k), max_step)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            flags = list(ex.map(one, range(n_traj)))
    else:
        flags = [one(k) for k in range(n_traj)]
    flags = np.array(flags, dtype=bool).reshape(n_traj, len(n_list))
    table = []
    for j, n in enumerate(n_list):
        hits = int(flags[:, j].sum())
        lo, hi = wilson_interval(hits, n_traj)
        table.append({"n": n, "exceedances": hits, "n_traj": int(n_traj),
                      "frequency": hits / n_traj, "wilson_low": lo,
                      "wilson_high": hi})
    return table


def resampling_params(pi, mu: float) -> MarkovParams:
    """Chain whose every row is ``pi``, started from ``pi``."""
    pi = np.asarray(pi, dtype=float)
    return MarkovParams(pi, mu, np.tile(pi, (pi.size, 1)))


def mu_scan(sys: SwitchedSystem, pi, mu_list: Sequence[float], T: float,
            n_traj: Union[int, Sequence[int]], seed: int = 0,
            threads: int = 1) -> List[LyapunovEstimate]:
    """Estimates along increasing clock rates with all rows of P equal to pi.

    ``n_traj`` may be a single count or one count per rate.
    """
    counts = ([int(n_traj)] * len(mu_list) if np.isscalar(n_traj)
              else [int(c) for c in n_traj])
    if len(counts) != len(mu_list):
        raise InvalidInput("one trajectory count per rate expected")
    out = []
    for mu, cnt in zip(mu_list, counts):
        est = lambda_p_estimate(sys, resampling_params(pi, mu), T, cnt, seed,
                                threads)
        log.info("mu=%g lambda_p=%.6g +- %.2g", mu, est.value, est.stderr)
        out.append(est)
    return out


def sphere_occupation(sys: SwitchedSystem, pi, mu: float, T: float,
                      eps_angle: float, seed: int = 0, x0=None,
                      max_step: float = 0.01, cluster_tol: float = 1e-6) -> float:
    """Fraction of ``[T/10, T]`` the direction ``x/|x|`` spends near ``E_1``.

    ``E_1`` is the dominant real-part eigenspace of ``M = sum pi_i A_i`` and
    "near" means principal angle at most ``eps_angle``.
    """
    pi = np.asarray(pi, dtype=float)
    M = sys.combination(pi)
    split = real_part_split(M, cluster_tol)
    if split.k < 2:
        raise DegenerateSplit("all eigenvalues of M share one real part")
    if x0 is None:
        x0 = np.ones(sys.d) / np.sqrt(sys.d)
    x0 = np.ascontiguousarray(np.asarray(x0, dtype=float))
    path = simulate_chain(resampling_params(pi, mu), T, seed)
    basis = np.ascontiguousarray(split.bases[0])
    return float(_kernels.angular_occupation(
        sys.modes, path.states, path.durations, x0 / np.linalg.norm(x0),
        basis, max_step, T / 10.0, eps_angle))


def lambda_p_conv_search(sys: SwitchedSystem, hull_value: float,
                         hull_weights, candidates: int = 8, T: float = 100.0,
                         n_traj: int = 16, seed: int = 0,
                         threads: int = 1) -> Dict[str, object]:
    """Lower evidence for the supremum over convexified processes.

    The frozen single-class process with weights ``hull_weights`` attains
    ``hull_value`` exactly.  Random two-class processes are then estimated;
    one replaces the incumbent only if its estimate minus ``3 stderr + 2K/T``
    is larger, so the reported value stays conservative.
    """
    best = {"value": float(hull_value), "source": "hull",
            "weights": [float(w) for w in hull_weights]}
    N = sys.N
    if N < 2:
        return best
    rng = np.random.default_rng(seed)
    for c in range(candidates):
        perm = rng.permutation(N)
        cut = int(rng.integers(1, N))
        sets = [np.sort(perm[:cut]), np.sort(perm[cut:])]
        ws = [rng.dirichlet(np.ones(s.size)) for s in sets]
        mu = float(10.0 ** rng.uniform(-1, 1))
        chain = MarkovParams([0.5, 0.5], mu, [[0.0, 1.0], [1.0, 0.0]])
        conv = ConvexifiedProcess.build(sys, sets, ws, chain)
        est = lambda_p_estimate(conv.system(), chain, T, n_traj, seed + c + 1,
                                threads)
        low = est.value - 3 * est.stderr - 2 * conv.system().K / T
        if low > best["value"]:
            best = {"value": float(low), "source": "two-class",
                    "index_sets": [[int(i) + 1 for i in s] for s in sets],
                    "weights": [w.tolist() for w in ws], "mu": mu}
    return best
