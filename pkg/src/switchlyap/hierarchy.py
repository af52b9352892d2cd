"""Timescale hierarchies of monomial rate families.

A family ``lambda_n(i, j) = c_ij n^alpha_ij`` is decomposed into levels.
Level 1 lives on single states at the fastest scale ``1 / sum lambda_n``.
Each later level lives on the recurrence classes of the previous limit
chain; its timescale is the inverse of the summed escape rates
``cap(E_x, E \\ E_x) / pi(E_x)`` and its limit rates come from the trace of
the chain on the union of the classes.  Beyond level 1 all leading orders
are read off numerically from a log-spaced grid of ``n``.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import _kernels
from .ctmc import (MarkovParams, RateMatrix, _components, capacity, gth,
                   harmonic_function, strongly_connected, stream,
                   trace_class_rates)
from .errors import (InvalidInput, NotAFastFamily, NonErgodicInput,
                     ScaleResolutionFailure)
from .flows import SwitchedSystem
from .linalg import matrix_exponential
from .pdmp import ConvexifiedProcess

log = logging.getLogger(__name__)

DEFAULT_GRID = (1e3, 1e4, 1e5, 1e6, 1e7)
DEFAULT_FIT_TOL = 0.05
CASES = ("deterministic-limit", "markov-limit", "frozen")


@dataclass(frozen=True)
class RateFamily:
    """Monomial jump rates on ``N`` states (0-based ``entries``)."""

    N: int
    entries: Tuple[Tuple[int, int, float, float], ...]

    def __post_init__(self):
        ents = tuple((int(i), int(j), float(c), float(a))
                     for i, j, c, a in self.entries)
        if self.N < 1:
            raise InvalidInput("N must be positive")
        seen = set()
        for i, j, c, a in ents:
            if not (0 <= i < self.N and 0 <= j < self.N) or i == j:
                raise InvalidInput(f"bad rate entry ({i + 1}, {j + 1})")
            if (i, j) in seen:
                raise InvalidInput(f"duplicate rate entry ({i + 1}, {j + 1})")
            if not (np.isfinite(c) and c > 0 and np.isfinite(a)):
                raise InvalidInput("coefficients must be positive and "
                                   "exponents finite")
            seen.add((i, j))
        object.__setattr__(self, "entries", ents)
        if self.N > 1 and not strongly_connected(self.support()):
            raise InvalidInput("rate support is not strongly connected")

    def support(self) -> np.ndarray:
        s = np.zeros((self.N, self.N), dtype=bool)
        for i, j, _, _ in self.entries:
            s[i, j] = True
        return s

    def evaluate(self, n: float) -> RateMatrix:
        r = np.zeros((self.N, self.N))
        for i, j, c, a in self.entries:
            r[i, j] = c * float(n) ** a
        return RateMatrix(r)


@dataclass(frozen=True)
class Level:
    """One rung of the ladder.

    ``classes``/``delta`` are the partition the level lives on;
    ``exponent``/``coefficient`` describe ``theta^j ~ coefficient * n^exponent``;
    ``rates`` are the limit-chain rates between ``classes``.
    """

    classes: List[np.ndarray]
    delta: np.ndarray
    exponent: float
    coefficient: float
    raw_exponent: float
    residual: float
    rates: np.ndarray
    rate_exponents: np.ndarray
    low_confidence: bool = False

    @property
    def size(self) -> int:
        return len(self.classes)

    def generator(self) -> np.ndarray:
        return self.rates - np.diag(self.rates.sum(axis=1))

    def psi(self, N: int) -> np.ndarray:
        """Coarse-grained label of each state, ``-1`` on ``delta``."""
        lab = np.full(N, -1, dtype=np.int64)
        for x, c in enumerate(self.classes):
            lab[c] = x
        return lab


@dataclass(frozen=True)
class HierarchyReport:
    levels: List[Level]
    final_classes: List[np.ndarray]
    final_delta: np.ndarray
    n_grid: Tuple[float, ...]
    fit_tol: float

    @property
    def p(self) -> int:
        return len(self.levels)

    @property
    def exponents(self) -> List[float]:
        return [lv.exponent for lv in self.levels]

    @property
    def h(self) -> int:
        """Number of levels with vanishing timescale (0 if none)."""
        return sum(1 for e in self.exponents if e < 0)

    @property
    def case(self) -> str:
        h = self.h
        if h == self.p:
            return "deterministic-limit"
        if self.levels[h].exponent == 0:
            return "markov-limit"
        return "frozen"

    def partition(self, j: int) -> Tuple[List[np.ndarray], np.ndarray]:
        """Partition at 1-based level ``j``; ``j = p + 1`` is the last one."""
        if j == self.p + 1:
            return self.final_classes, self.final_delta
        lv = self.levels[j - 1]
        return lv.classes, lv.delta


def snap(x: float, tol: float, max_den: int = 12) -> Tuple[float, bool]:
    """Nearest ``p/q`` with ``q <= max_den``; flag whether within ``tol``."""
    f = Fraction(x).limit_denominator(max_den)
    ok = abs(float(f) - x) <= tol
    return (float(f), True) if ok else (float(x), False)


def _extrapolate(vals: np.ndarray) -> float:
    """Limit of a sequence from its last three terms (Aitken step).

    Applied only when the last differences shrink geometrically with the
    same sign; otherwise the last term is returned.
    """
    if len(vals) < 3:
        return float(vals[-1])
    a, b, c = vals[-3:]
    d1, d2 = b - a, c - b
    if d1 == 0 or d2 == 0 or np.sign(d1) != np.sign(d2):
        return float(c)
    rho = d2 / d1
    if not 0 < rho < 0.9:
        return float(c)
    return float(c + d2 * rho / (1 - rho))


def _loglog_fit(ns: np.ndarray, ys: np.ndarray) -> Tuple[float, float]:
    """Asymptotic log-log slope and its distance from the last local slope.

    Local slopes between consecutive grid points are extrapolated like any
    other sequence, which removes geometric corrections such as powers of
    ``a_n / n``.  A pure power law gives residual 0.  Without a geometric
    trend the residual is the spread of the last two local slopes.
    """
    x, y = np.log(ns), np.log(ys)
    local = np.diff(y) / np.diff(x)
    slope = _extrapolate(local)
    if slope == local[-1] and local.size > 1:
        return float(slope), float(abs(local[-1] - local[-2]))
    return float(slope), float(abs(local[-1] - slope))


def _next_partition(classes: List[np.ndarray], delta: np.ndarray,
                    rates: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
    comps, sinks = _components(rates > 0)
    sink_groups = sorted((comps[c] for c in sinks),
                         key=lambda g: min(classes[x].min() for x in g))
    new = [np.sort(np.concatenate([classes[x] for x in g])) for g in sink_groups]
    trans = [x for x in range(len(classes))
             if not any(x in g for g in sink_groups)]
    extra = [classes[x] for x in trans]
    new_delta = np.sort(np.concatenate([delta] + extra)).astype(np.int64)
    return new, new_delta


def _escape_sum(rm: RateMatrix, pi: np.ndarray, classes) -> float:
    total = 0.0
    for x, cx in enumerate(classes):
        rest = np.concatenate([c for y, c in enumerate(classes) if y != x])
        total += capacity(rm, pi, cx, rest, check=False) / pi[cx].sum()
    return total


def _level_at(family: RateFamily, n: float, classes, delta):
    rm = family.evaluate(n)
    pi = gth(rm.rates)
    theta = 1.0 / _escape_sum(rm, pi, classes)
    _, rE = trace_class_rates(rm, pi, classes, delta)
    return theta, theta * rE


def build_hierarchy(family: RateFamily, n_grid: Sequence[float] = DEFAULT_GRID,
                    fit_tol: float = DEFAULT_FIT_TOL,
                    threads: int = 1) -> HierarchyReport:
    """Ladder of timescales, partitions and limit chains.

    Raises
    ------
    ScaleResolutionFailure
        If a fitted exponent is not a clean power law on ``n_grid``, or the
        exponents fail to increase, or a limit chain has no nonzero rate.
    """
    ns = np.array(sorted(float(n) for n in n_grid))
    if ns.size < 3 or np.log10(ns[-1] / ns[0]) < 4 - 1e-9:
        raise InvalidInput("n_grid needs at least 3 points over 4 decades")
    N = family.N
    if N == 1:
        return HierarchyReport([], [np.arange(1)], np.zeros(0, dtype=np.int64),
                               tuple(ns), fit_tol)
    top = max(a for _, _, _, a in family.entries)
    C = sum(c for _, _, c, a in family.entries if a == top)
    r1 = np.zeros((N, N))
    for i, j, c, a in family.entries:
        if a == top:
            r1[i, j] = c / C
    singles = [np.array([i]) for i in range(N)]
    empty = np.zeros(0, dtype=np.int64)
    expo1 = np.where(r1 > 0, 0.0, np.nan)
    levels = [Level(singles, empty, -top, 1.0 / C, -top, 0.0, r1, expo1)]
    classes, delta = _next_partition(singles, empty, r1)

    while len(classes) > 1:
        if threads and threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                res = list(ex.map(lambda n: _level_at(family, n, classes, delta), ns))
        else:
            res = [_level_at(family, n, classes, delta) for n in ns]
        thetas = np.array([r[0] for r in res])
        scaled = np.array([r[1] for r in res])
        raw, resid = _loglog_fit(ns, thetas)
        if resid > fit_tol:
            raise ScaleResolutionFailure(
                f"timescale of level {len(levels) + 1} is not a power law on "
                f"the grid (local slope spread {resid:.3g}); widen --ngrid")
        e, snapped = snap(raw, fit_tol)
        coef = _extrapolate(thetas / ns ** e)
        k = len(classes)
        rates = np.zeros((k, k))
        rexp = np.full((k, k), np.nan)
        low_conf = not snapped
        for x in range(k):
            for y in range(k):
                if x == y:
                    continue
                v = scaled[:, x, y]
                if np.all(v == 0):
                    continue
                if np.any(v <= 0):
                    low_conf = True
                    continue
                s, _ = _loglog_fit(ns, v)
                rexp[x, y] = s
                if s < -fit_tol:
                    continue
                rates[x, y] = _extrapolate(v)
                if abs(s) > fit_tol:
                    low_conf = True
        if not np.any(rates > 0):
            raise ScaleResolutionFailure(
                f"limit chain of level {len(levels) + 1} has no nonzero rate")
        if e <= levels[-1].exponent + 0.5 * fit_tol:
            raise ScaleResolutionFailure(
                f"timescale exponent {e:.4g} does not exceed the previous "
                f"{levels[-1].exponent:.4g}")
        levels.append(Level(classes, delta, e, coef, raw, resid, rates, rexp,
                            low_conf))
        log.info("level %d: exponent %.4g, %d classes", len(levels), e, k)
        new_classes, new_delta = _next_partition(classes, delta, rates)
        if len(new_classes) >= len(classes):
            raise ScaleResolutionFailure("partition failed to coarsen")
        classes, delta = new_classes, new_delta
    return HierarchyReport(levels, classes, delta, tuple(ns), fit_tol)


def _localized_weights(family: RateFamily, n: float, cls: np.ndarray,
                       delta: np.ndarray) -> np.ndarray:
    """Invariant law of the chain pinned at ``min(cls)``, restricted to ``cls``."""
    rm = family.evaluate(n).rates
    ebar = np.union1d(cls, delta)
    pin = int(np.searchsorted(ebar, cls.min()))
    loc = rm[np.ix_(ebar, ebar)].copy()
    out = rm[ebar].sum(axis=1) - loc.sum(axis=1)
    loc[:, pin] += out
    np.fill_diagonal(loc, 0.0)
    comps, sinks = _components(loc > 0)
    home = [comps[c] for c in sinks if pin in comps[c]]
    if not home:
        raise NonErgodicInput("pinned state is not recurrent")
    members = home[0]
    law = np.zeros(ebar.size)
    law[members] = gth(loc[np.ix_(members, members)])
    w = law[np.searchsorted(ebar, cls)]
    return w / w.sum()


def _entrance_law(family: RateFamily, n: float, classes, start: int) -> np.ndarray:
    """Law of the first class of ``classes`` entered from ``start``."""
    for z, c in enumerate(classes):
        if start in set(c.tolist()):
            out = np.zeros(len(classes))
            out[z] = 1.0
            return out
    if len(classes) == 1:
        return np.ones(1)
    rm = family.evaluate(n)
    out = np.zeros(len(classes))
    for z, c in enumerate(classes):
        rest = np.concatenate([cc for y, cc in enumerate(classes) if y != z])
        g = harmonic_function(rm, c, rest)
        out[z] = g[start]
    if np.any(np.isnan(out)):
        raise NonErgodicInput("start state cannot reach the classes")
    return out / out.sum()


def limit_process(report: HierarchyReport, family: RateFamily,
                  sys: SwitchedSystem, n_grid: Optional[Sequence[float]] = None,
                  start: Union[None, int, Sequence[float]] = None,
                  mode_map: Optional[Sequence[int]] = None) -> ConvexifiedProcess:
    """Convexified process approximating the family at scale 1.

    ``start`` is a 0-based state or an initial law on the states (default
    uniform).  ``mode_map[i]`` is the mode driving the dynamics in state
    ``i`` (default the identity).
    """
    if not report.levels or report.levels[0].exponent >= 0:
        raise NotAFastFamily("fastest timescale does not vanish; "
                             "use the plain Markov estimate instead")
    ns = np.array(sorted(n_grid if n_grid is not None else report.n_grid),
                  dtype=float)
    N = family.N
    mode_map = np.arange(N) if mode_map is None else np.asarray(mode_map)
    if mode_map.shape != (N,) or mode_map.min() < 0 or mode_map.max() >= sys.N:
        raise InvalidInput("mode map must send every state to a mode")
    h = report.h
    classes, delta = report.partition(h + 1)
    k = len(classes)
    weights = []
    for c in classes:
        per_n = np.array([_localized_weights(family, n, c, delta) for n in ns])
        w = np.array([_extrapolate(per_n[:, a]) for a in range(c.size)])
        w = np.clip(w, 0.0, None)
        weights.append(w / w.sum())
    index_sets, mode_weights = [], []
    used = set()
    for c, w in zip(classes, weights):
        modes = mode_map[c]
        uniq = np.unique(modes)
        if used & set(uniq.tolist()):
            raise InvalidInput("two macro-states share a mode; mode index "
                               "sets must be disjoint")
        used |= set(uniq.tolist())
        index_sets.append(uniq)
        mode_weights.append(np.array([w[modes == m].sum() for m in uniq]))
    case = report.case
    if case == "markov-limit":
        lv = report.levels[h]
        Q = lv.rates / lv.coefficient
        mu = float(np.max(Q.sum(axis=1)))
        P = Q / mu
        P[np.diag_indices(k)] = 1.0 - P.sum(axis=1)
    else:
        mu, P = 1.0, np.eye(k)
    if start is None:
        start = np.full(N, 1.0 / N)
    if np.isscalar(start):
        nu = _entrance_law(family, ns[-1], classes, int(start))
    else:
        law = np.asarray(start, dtype=float)
        nu = sum(law[i] * _entrance_law(family, ns[-1], classes, i)
                 for i in range(N) if law[i] > 0)
    nu = nu / nu.sum()
    return ConvexifiedProcess.build(sys, index_sets, mode_weights,
                                    MarkovParams(nu, mu, P))


def theta_at(report: HierarchyReport, family: RateFamily, j: int,
             n: float) -> float:
    """Timescale of 1-based level ``j`` evaluated at ``n``."""
    rm = family.evaluate(n)
    if j == 1:
        return 1.0 / float(rm.holding.sum())
    lv = report.levels[j - 1]
    return 1.0 / _escape_sum(rm, gth(rm.rates), lv.classes)


@dataclass(frozen=True)
class LevelDiagnostic:
    level: int
    n: float
    t: float
    horizon: float
    empirical: np.ndarray
    limit: np.ndarray
    tv: float
    band: float
    delta_occupation: float
    n_traj: int

    @property
    def within_band(self) -> bool:
        return self.tv <= self.band


def _simulate_final(rm: RateMatrix, start: int, horizon: float, rng,
                    chunk: int = 1 << 16):
    hold = np.ascontiguousarray(rm.holding)
    cdf = np.ascontiguousarray(np.cumsum(rm.jump_matrix(), axis=1))
    occ = np.zeros(rm.N)
    state, t = int(start), 0.0
    while True:
        exps = rng.standard_exponential(chunk)
        us = rng.random(chunk)
        state, t, _, done = _kernels.gillespie_chunk(hold, cdf, state, t,
                                                     horizon, exps, us, occ)
        if done:
            return state, occ


def verify_level(family: RateFamily, report: HierarchyReport, j: int, n: float,
                 t: float, n_traj: int, seed: int = 0, start: int = 0,
                 absolute_time: bool = False, threads: int = 1) -> LevelDiagnostic:
    """Compare the law of the coarse-grained state with the limit chain.

    The chain at parameter ``n`` runs from ``start`` for ``t * theta_n^j``
    (or ``t`` when ``absolute_time``).  Landing in ``delta`` counts as a
    mismatch.  ``band`` is half the sum of 3-sigma multinomial errors.
    """
    lv = report.levels[j - 1]
    rm = family.evaluate(n)
    horizon = t if absolute_time else t * theta_at(report, family, j, n)
    lab = lv.psi(family.N)
    k = lv.size
    if absolute_time:
        scaled_t = t / theta_at(report, family, j, n)
    else:
        scaled_t = t
    if lab[start] >= 0:
        p0 = np.zeros(k)
        p0[lab[start]] = 1.0
    else:
        p0 = _entrance_law(family, n, lv.classes, start)
    limit = p0 @ matrix_exponential(lv.generator(), scaled_t)
    delta = lab < 0

    def one(m):
        s, occ = _simulate_final(rm, start, horizon, stream(seed, m))
        return s, float(occ[delta].sum() / horizon)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            runs = list(ex.map(one, range(n_traj)))
    else:
        runs = [one(m) for m in range(n_traj)]
    counts = np.zeros(k + 1)
    for s, _ in runs:
        counts[lab[s] if lab[s] >= 0 else k] += 1
    emp = counts / n_traj
    lim = np.append(limit, 0.0)
    tv = 0.5 * float(np.abs(emp - lim).sum())
    band = 0.5 * float(np.sum(3 * np.sqrt(lim * (1 - lim) / n_traj)))
    occ = float(np.mean([o for _, o in runs]))
    return LevelDiagnostic(j, float(n), float(t), float(horizon), emp, lim,
                           tv, band, occ, int(n_traj))
