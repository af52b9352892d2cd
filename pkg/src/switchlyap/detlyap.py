"""Two-sided bounds on the deterministic Lyapunov exponent.

The lower bound comes from spectral radii of finite products of mode
exponentials, found by beam search.  The upper bound comes from a common
quadratic norm, i.e. the smallest rate ``max_i lambda_max(sym(S A_i S^-1))``
found by subgradient descent over ``S``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.optimize

from . import _kernels
from .flows import Signal, SwitchedSystem, log_spectral_radius_of_flow
from .linalg import skew_shift_certificate

log = logging.getLogger(__name__)

DEFAULT_GRID = (0.05, 0.1, 0.2, 0.4, 0.8)
# below this period log(spr)/T is dominated by rounding
MIN_PERIOD = 1e-3


@dataclass(frozen=True)
class LyapunovBracket:
    lower: float
    upper: float
    lower_witness: Signal
    upper_norm: np.ndarray

    @property
    def gap(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True)
class BracketConfig:
    grid: Tuple[float, ...] = DEFAULT_GRID
    depth: int = 12
    beam: int = 256
    iterations: int = 500
    restarts: int = 20
    seed: int = 0


def _center(sys: SwitchedSystem) -> Tuple[np.ndarray, float]:
    """Modes with the mean trace shift removed, and that shift."""
    c0 = float(np.mean([np.trace(m) for m in sys.modes]) / sys.d)
    return sys.modes - c0 * np.eye(sys.d), c0


def _log_spr(mats: np.ndarray) -> np.ndarray:
    r = np.max(np.abs(np.linalg.eigvals(mats)), axis=-1)
    with np.errstate(divide="ignore"):
        return np.log(r)


def _score(modes, states, durations) -> float:
    phi, ls = _kernels.propagate_flow(modes, states, durations)
    total = float(np.sum(durations))
    r = np.max(np.abs(np.linalg.eigvals(phi)))
    if r == 0.0 or total <= 0:
        return -np.inf
    return (np.log(r) + ls) / total


def _golden_max(f, lo, hi, x0, f0, iters=120):
    g = (np.sqrt(5.0) - 1) / 2
    a, b = lo, hi
    c = b - g * (b - a)
    d = a + g * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if b - a <= 4e-16 * b:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    x, fx = (c, fc) if fc >= fd else (d, fd)
    if fx > f0:
        return x, fx
    return x0, f0


def _merge_runs(states, durations):
    """Collapse same-mode neighbours, cyclically, since spr only sees their sum."""
    st, du = [int(states[0])], [float(durations[0])]
    for i, t in zip(states[1:], durations[1:]):
        if int(i) == st[-1]:
            du[-1] += float(t)
        else:
            st.append(int(i))
            du.append(float(t))
    if len(st) > 1 and st[0] == st[-1]:
        du[0] += du.pop()
        st.pop()
    return np.array(st, dtype=np.int64), np.array(du)


def _refine(modes, states, durations, value, hi, passes=2, max_passes=100):
    """Coordinate-wise golden-section ascent on the durations.

    At least ``passes`` sweeps; sweeping continues while a sweep still gains
    more than rounding level, so the result does not depend on the path.
    """
    durations = durations.copy()
    for sweep in range(max_passes):
        before = value
        for p in range(len(durations)):
            def f(tau, p=p):
                trial = durations.copy()
                trial[p] = tau
                return _score(modes, states, trial)
            durations[p], value = _golden_max(f, 1e-9, hi, durations[p], value)
        if sweep + 1 >= passes and value - before <= 1e-15 * (1 + abs(value)):
            break
    return _polish(modes, states, durations, value, hi)


def _polish(modes, states, durations, value, hi):
    """Nelder-Mead on log-durations; follows ridges that stall coordinate ascent."""
    if durations.size < 2:
        return durations, value

    def f(u):
        tau = np.exp(u)
        if np.any(tau < 1e-9) or np.any(tau > hi) or tau.sum() < MIN_PERIOD:
            return np.inf
        return -_score(modes, states, tau)

    res = scipy.optimize.minimize(
        f, np.log(durations), method="Nelder-Mead",
        options={"xatol": 1e-10, "fatol": 1e-16, "maxiter": 200 * durations.size})
    if np.isfinite(res.fun) and -res.fun > value:
        return np.exp(res.x), float(-res.fun)
    return durations, value


def lambda_d_lower(sys: SwitchedSystem, durations: Sequence[float] = DEFAULT_GRID,
                   depth: int = 12, budget: int = 256,
                   refine: bool = True) -> Tuple[float, Signal]:
    """Lower bound ``max (1/T) log spr(Phi)`` over explored products.

    Products are grown one factor at a time on the left; each factor is
    a mode exponential with a duration from ``durations``.  The ``budget``
    best products (by value, then lexicographic witness) survive each
    round.  The best product overall then has its durations sharpened by
    golden-section search.
    """
    if depth < 1 or len(durations) == 0:
        raise ValueError("need depth >= 1 and a nonempty grid")
    grid = np.array(sorted(float(t) for t in durations))
    if np.any(grid <= 0):
        raise ValueError("grid durations must be positive")
    modes, c0 = _center(sys)
    N, d = sys.N, sys.d
    moves = [(i, g) for i in range(N) for g in range(len(grid))]
    factors = np.array([_kernels.expm(modes[i] * grid[g]) for i, g in moves])
    step_time = np.array([grid[g] for _, g in moves])

    phis = np.eye(d)[None]
    logs = np.zeros(1)
    times = np.zeros(1)
    words: List[tuple] = [()]
    best = (-np.inf, None)

    for _ in range(depth):
        cand = np.einsum("mij,bjk->bmik", factors, phis).reshape(-1, d, d)
        ctimes = (times[:, None] + step_time[None, :]).ravel()
        big = np.max(np.abs(cand), axis=(1, 2))
        big[big == 0] = 1.0
        cand = cand / big[:, None, None]
        clogs = np.repeat(logs, len(moves)) + np.log(big)
        scores = (clogs + _log_spr(cand)) / ctimes
        cwords = [w + (mv,) for w in words for mv in moves]
        order = sorted(range(len(cwords)),
                       key=lambda k: (-scores[k], cwords[k]))
        keep, seen = [], set()
        for k in order:
            if not np.isfinite(scores[k]) and keep:
                continue
            key = (round(ctimes[k], 12), round(float(scores[k]), 12),
                   tuple(np.round(cand[k], 10).ravel()))
            if key in seen:
                continue
            seen.add(key)
            keep.append(k)
            if len(keep) >= budget:
                break
        top = keep[0]
        if scores[top] > best[0] or (scores[top] == best[0]
                                     and cwords[top] < best[1]):
            best = (float(scores[top]), cwords[top])
        phis, logs, times = cand[keep], clogs[keep], ctimes[keep]
        words = [cwords[k] for k in keep]

    value, word = best
    states = np.array([mv[0] for mv in word], dtype=np.int64)
    durs = np.array([grid[mv[1]] for mv in word])
    states, durs = _merge_runs(states, durs)
    value = _score(modes, states, durs)
    if refine:
        durs, value = _refine(modes, states, durs, value,
                              2 * max(grid[-1], float(durs.max())))
    witness = Signal(durs, states)
    log.debug("lower bound %.6g from %d factors", value + c0, len(word))
    return float(value + c0), witness


def _quad_rate(mats: np.ndarray, S: np.ndarray):
    """max_i lambda_max(sym(S A_i S^-1)) with a subgradient in S."""
    Si = np.linalg.inv(S)
    best, grad = -np.inf, None
    for A in mats:
        B = S @ A @ Si
        vals, vecs = np.linalg.eigh(0.5 * (B + B.T))
        if vals[-1] > best:
            v = vecs[:, -1]
            w = Si @ v
            best = vals[-1]
            grad = np.outer(v, A @ w) - np.outer(B.T @ v, w)
        # ties keep the first active mode
    return float(best), grad


def quadratic_rate(sys: SwitchedSystem, Q: np.ndarray) -> float:
    """Rate bound ``max_i (1/2) lambda_max(Q^-1/2 (A_i^T Q + Q A_i) Q^-1/2)``."""
    S = np.linalg.cholesky(0.5 * (Q + Q.T)).T
    return _quad_rate(sys.modes, S)[0]


def _descend(mats, S, iterations):
    val, grad = _quad_rate(mats, S)
    step = 0.1
    for _ in range(iterations):
        gn = np.linalg.norm(grad)
        if gn == 0 or step < 1e-16:
            break
        trial = S - step * grad / gn * np.linalg.norm(S)
        if np.linalg.cond(trial) > 1e12:
            step *= 0.5
            continue
        tv, tg = _quad_rate(mats, trial)
        if tv < val:
            S, val, grad = trial / np.linalg.norm(trial), tv, tg
            step *= 1.2
        else:
            step *= 0.5
    return val, S


def _starts(mats, d, rng, restarts):
    out = [np.eye(d)]
    cert = skew_shift_certificate(list(mats))
    if cert is not None:
        out.append(np.linalg.cholesky(cert[1]).T)
    hull = np.mean(mats, axis=0)
    for A in list(mats) + [hull]:
        _, V = np.linalg.eig(A)
        if np.linalg.cond(V) < 1e10:
            W = np.linalg.inv(V)
            Q = (W.conj().T @ W).real
            Q = 0.5 * (Q + Q.T)
            try:
                out.append(np.linalg.cholesky(Q).T)
            except np.linalg.LinAlgError:
                pass
    for _ in range(restarts):
        S = np.triu(rng.standard_normal((d, d)))
        S[np.diag_indices(d)] = np.abs(np.diag(S)) + 0.5
        out.append(S)
    return out


def lambda_d_upper(sys: SwitchedSystem, iterations: int = 500,
                   restarts: int = 20, seed: int = 0) -> Tuple[float, np.ndarray]:
    """Upper bound from the best common quadratic norm found.

    Returns the bound and ``Q`` (scaled to unit largest eigenvalue).  For
    any SPD ``Q`` the returned rate is a valid upper bound.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    modes, c0 = _center(sys)
    rng = np.random.default_rng(seed)
    best_val, best_S = np.inf, None
    for S in _starts(modes, sys.d, rng, restarts):
        val, S = _descend(modes, S, iterations)
        if val < best_val:
            best_val, best_S = val, S
    Q = best_S.T @ best_S
    Q = 0.5 * (Q + Q.T)
    Q /= np.max(np.linalg.eigvalsh(Q))
    return float(best_val + c0), Q


def lambda_d_bracket(sys: SwitchedSystem,
                     config: Optional[BracketConfig] = None) -> LyapunovBracket:
    """Combine :func:`lambda_d_lower` and :func:`lambda_d_upper`."""
    config = config or BracketConfig()
    lo, wit = lambda_d_lower(sys, config.grid, config.depth, config.beam)
    up, Q = lambda_d_upper(sys, config.iterations, config.restarts, config.seed)
    if lo > up + 1e-9:
        log.warning("lower bound %.12g exceeds upper bound %.12g", lo, up)
    return LyapunovBracket(lo, up, wit, Q)


def _simplex_moves(n):
    return [(i, j) for i in range(n) for j in range(n) if i != j]


def max_abscissa_over_hull(sys: SwitchedSystem, starts: int = 8,
                           seed: int = 0, min_step: float = 1e-12
                           ) -> Tuple[float, np.ndarray]:
    """Maximize the spectral abscissa of ``sum beta_i A_i`` over the simplex.

    Pattern search with pair moves ``beta + h (e_i - e_j)`` from the
    vertices, the barycenter and random Dirichlet points.
    """
    if starts < 1:
        raise ValueError("starts must be >= 1")
    modes, c0 = _center(sys)
    N = sys.N
    if N == 1:
        return float(np.max(np.linalg.eigvals(modes[0]).real) + c0), np.ones(1)

    def f(b):
        return float(np.max(np.linalg.eigvals(np.tensordot(b, modes, 1)).real))

    rng = np.random.default_rng(seed)
    points = [np.eye(N)[i] for i in range(N)] + [np.full(N, 1.0 / N)]
    points += [rng.dirichlet(np.ones(N)) for _ in range(max(0, starts - len(points)))]
    moves = _simplex_moves(N)
    best_val, best_b = -np.inf, None
    for b in points:
        b = b.copy()
        val = f(b)
        h = 0.25
        while h >= min_step:
            improved = False
            for i, j in moves:
                step = min(h, b[j])
                if step <= 0:
                    continue
                trial = b.copy()
                trial[i] += step
                trial[j] -= step
                tv = f(trial)
                if tv > val:
                    b, val, improved = trial, tv, True
            if not improved:
                h *= 0.5
        if val > best_val:
            best_val, best_b = val, b
    return float(best_val + c0), best_b
