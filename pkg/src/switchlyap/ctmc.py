"""Continuous-time Markov chains on a finite state space.

Two descriptions are used.  :class:`MarkovParams` is the (initial law,
clock rate, transition matrix) triple driving a switching signal, where
trivial self-jumps are allowed.  :class:`RateMatrix` holds off-diagonal
jump rates and is the input to hitting probabilities, capacities and
trace processes, which all work on the embedded chain without self-loops.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse.csgraph import connected_components

from . import _kernels
from .errors import InternalError, InvalidInput, NonErgodicInput

CHUNK = 1 << 18


def stream(seed: int, k: int) -> np.random.Generator:
    """Independent generator for trajectory ``k`` of a run seeded ``seed``."""
    return np.random.Generator(np.random.Philox(
        np.random.SeedSequence(int(seed), spawn_key=(int(k),))))


@dataclass(frozen=True)
class MarkovParams:
    """Initial law ``nu``, clock rate ``mu`` and stochastic matrix ``P``."""

    nu: np.ndarray
    mu: float
    P: np.ndarray

    def __post_init__(self):
        nu = np.asarray(self.nu, dtype=float)
        P = np.asarray(self.P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
            raise InvalidInput("P must be a nonempty square matrix")
        if nu.shape != (P.shape[0],):
            raise InvalidInput("nu must have one entry per state")
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(nu))):
            raise InvalidInput("non-finite Markov parameters")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1) > 1e-12):
            raise InvalidInput("P must be stochastic")
        if np.any(nu < 0) or abs(nu.sum() - 1) > 1e-12:
            raise InvalidInput("nu must be a probability vector")
        if not (np.isfinite(self.mu) and self.mu > 0):
            raise InvalidInput("mu must be positive")
        nu.setflags(write=False)
        P.setflags(write=False)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "mu", float(self.mu))

    @property
    def N(self) -> int:
        return self.P.shape[0]

    def rates(self) -> "RateMatrix":
        """Off-diagonal jump rates ``mu * P[i, j]``."""
        return RateMatrix(self.mu * self.P)

    def reparameterized(self, alpha: float) -> "MarkovParams":
        """Same law with clock ``mu / alpha`` and ``I + alpha (P - I)``."""
        if not 0 < alpha <= 1:
            raise InvalidInput("alpha must lie in (0, 1]")
        I = np.eye(self.N)
        return MarkovParams(self.nu, self.mu / alpha, I + alpha * (self.P - I))

    def effective_rates(self) -> Tuple[np.ndarray, np.ndarray]:
        """Leave rates ``mu (1 - p_ii)`` and the conditional jump law."""
        off = self.P - np.diag(np.diag(self.P))
        leave = off.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            law = np.where(leave[:, None] > 0, off / leave[:, None], 0.0)
        return self.mu * leave, law


@dataclass(frozen=True)
class RateMatrix:
    """Nonnegative off-diagonal jump rates; the diagonal is ignored."""

    rates: np.ndarray
    holding: np.ndarray = field(init=False)

    def __post_init__(self):
        r = np.array(self.rates, dtype=float)
        if r.ndim != 2 or r.shape[0] != r.shape[1] or r.shape[0] == 0:
            raise InvalidInput("rate matrix must be nonempty and square")
        np.fill_diagonal(r, 0.0)
        if not np.all(np.isfinite(r)) or np.any(r < 0):
            raise InvalidInput("rates must be finite and nonnegative")
        r.setflags(write=False)
        h = r.sum(axis=1)
        h.setflags(write=False)
        object.__setattr__(self, "rates", r)
        object.__setattr__(self, "holding", h)

    @property
    def N(self) -> int:
        return self.rates.shape[0]

    def generator(self) -> np.ndarray:
        return self.rates - np.diag(self.holding)

    def jump_matrix(self) -> np.ndarray:
        """Embedded chain; absorbing states keep a self-loop."""
        h = self.holding
        p = np.zeros_like(self.rates)
        live = h > 0
        p[live] = self.rates[live] / h[live, None]
        idx = np.flatnonzero(~live)
        p[idx, idx] = 1.0
        return p


@dataclass(frozen=True)
class ChainStructure:
    """Block decomposition of a stochastic matrix (0-based indices)."""

    permutation: np.ndarray
    classes: List[np.ndarray]
    transient: np.ndarray
    class_invariants: List[np.ndarray]
    alphas: Optional[np.ndarray]
    Q_block: np.ndarray

    @property
    def R(self) -> int:
        return len(self.classes)


def gth(rates: np.ndarray) -> np.ndarray:
    """Invariant law of an irreducible rate matrix by state reduction.

    Grassmann-Taksar-Heyman elimination; subtraction-free, so the result
    keeps full relative accuracy even for rates spanning many decades.
    """
    a = np.array(rates, dtype=float)
    np.fill_diagonal(a, 0.0)
    n = a.shape[0]
    if n == 1:
        return np.ones(1)
    s = np.zeros(n)
    for k in range(n - 1, 0, -1):
        s[k] = a[k, :k].sum()
        if s[k] <= 0:
            raise NonErgodicInput("chain is not strongly connected")
        a[:k, :k] += np.outer(a[:k, k], a[k, :k]) / s[k]
        np.fill_diagonal(a, 0.0)
    pi = np.zeros(n)
    pi[0] = 1.0
    for k in range(1, n):
        pi[k] = pi[:k] @ a[:k, k] / s[k]
    return pi / pi.sum()


def _components(support: np.ndarray):
    n, labels = connected_components(support.astype(np.int8), directed=True,
                                     connection="strong")
    comps = [np.flatnonzero(labels == c) for c in range(n)]
    sinks = []
    for c, members in enumerate(comps):
        out = support[np.ix_(members, np.arange(support.shape[0]))].any(axis=0)
        out[members] = False
        if not out.any():
            sinks.append(c)
    return comps, sinks


def strongly_connected(support: np.ndarray) -> bool:
    """Whether the digraph with adjacency ``support`` is strongly connected."""
    n, _ = connected_components(np.asarray(support, dtype=np.int8),
                                directed=True, connection="strong")
    return n == 1


def recurrence_decomposition(P) -> ChainStructure:
    """Recurrent classes (sink components) and transient states of ``P``."""
    P = np.asarray(P, dtype=float)
    if (P.ndim != 2 or P.shape[0] != P.shape[1] or np.any(P < 0)
            or np.any(np.abs(P.sum(axis=1) - 1) > 1e-12)):
        raise InvalidInput("P must be a stochastic matrix")
    comps, sinks = _components(P > 0)
    classes = sorted((comps[c] for c in sinks), key=lambda m: m[0])
    rec = np.concatenate(classes)
    transient = np.setdiff1d(np.arange(P.shape[0]), rec)
    invariants = []
    for members in classes:
        invariants.append(gth(P[np.ix_(members, members)]))
    perm = np.concatenate([rec, transient]).astype(np.int64)
    Q = P[np.ix_(transient, transient)]
    return ChainStructure(perm, classes, transient, invariants, None, Q)


def stationary_structure(params: MarkovParams) -> ChainStructure:
    """Decomposition plus absorption probabilities ``alphas`` from ``nu``."""
    st = recurrence_decomposition(params.P)
    P, nu = params.P, params.nu
    T = st.transient
    alphas = np.array([nu[c].sum() for c in st.classes])
    if T.size:
        I = np.eye(T.size)
        B = np.column_stack([P[np.ix_(T, c)].sum(axis=1) for c in st.classes])
        try:
            absorb = np.linalg.solve(I - st.Q_block, B)
        except np.linalg.LinAlgError as exc:
            raise InternalError("singular transient block") from exc
        alphas = alphas + nu[T] @ absorb
    return ChainStructure(st.permutation, st.classes, st.transient,
                          st.class_invariants, alphas, st.Q_block)


def _cdf(P: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.cumsum(P, axis=1))


def _draw_index(p: np.ndarray, u: float) -> int:
    c = np.cumsum(p)
    return int(min(np.searchsorted(c, u * c[-1], side="right"), len(p) - 1))


def chain_chunks(params: MarkovParams, T: float, rng: np.random.Generator,
                 first: Optional[int] = None, chunk: int = CHUNK
                 ) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Yield ``(states, durations)`` pieces of a path on ``[0, T]``.

    The clock rings at rate ``mu``; at each ring the next state is drawn
    from the current row of ``P`` (possibly the same state).  Draw order is
    fixed, so the path is a deterministic function of the generator state.
    """
    if not T > 0:
        raise InvalidInput("T must be positive")
    if first is None:
        first = _draw_index(params.nu, rng.random())
    cdf = _cdf(params.P)
    t = 0.0
    state = int(first)
    while True:
        gaps = rng.standard_exponential(chunk) / params.mu
        us = rng.random(chunk)
        times = t + np.cumsum(gaps)
        stop = int(np.searchsorted(times, T, side="left"))
        if stop < chunk:
            seq = _kernels.chain_states(cdf, state, us[:stop])
            yield seq, np.diff(np.concatenate([[t], times[:stop], [T]]))
            return
        seq = _kernels.chain_states(cdf, state, us)
        yield seq[:-1], np.diff(np.concatenate([[t], times]))
        t = float(times[-1])
        state = int(seq[-1])


@dataclass(frozen=True)
class ChainPath:
    """Right-continuous path: ``states[m]`` holds on ``[times[m], times[m+1])``."""

    times: np.ndarray
    states: np.ndarray
    T: float

    @property
    def durations(self) -> np.ndarray:
        return np.diff(np.append(self.times, self.T))


def simulate_chain(params: MarkovParams, T: float, seed: int = 0,
                   k: int = 0) -> ChainPath:
    """Path of the switching chain on ``[0, T]`` from stream ``(seed, k)``.

    Clock rings that redraw the current state are kept as trivial jumps.
    """
    rng = stream(seed, k)
    states, durs = [], []
    for s, d in chain_chunks(params, T, rng):
        states.append(s)
        durs.append(d)
    st = np.concatenate(states)
    du = np.concatenate(durs)
    times = np.concatenate([[0.0], np.cumsum(du)[:-1]])
    return ChainPath(times, st, float(T))


def invariant_law(rates: RateMatrix) -> np.ndarray:
    """Invariant law of a strongly connected chain."""
    if not strongly_connected(rates.rates > 0):
        raise NonErgodicInput("chain is not strongly connected")
    return gth(rates.rates)


def _as_set(J, N, name) -> np.ndarray:
    idx = np.unique(np.asarray(list(J), dtype=np.int64))
    if idx.size == 0:
        raise InvalidInput(f"{name} must be nonempty")
    if idx.min() < 0 or idx.max() >= N:
        raise InvalidInput(f"{name} has a state outside the chain")
    return idx


def _reach(adj: np.ndarray, seeds: np.ndarray, blocked: np.ndarray) -> np.ndarray:
    """States reachable from ``seeds`` along ``adj`` without entering ``blocked``."""
    seen = np.zeros(adj.shape[0], dtype=bool)
    todo = [int(s) for s in seeds]
    seen[seeds] = True
    while todo:
        s = todo.pop()
        for j in np.flatnonzero(adj[s]):
            if not seen[j] and not blocked[j]:
                seen[j] = True
                todo.append(int(j))
    return seen


def harmonic_function(rates: RateMatrix, target: Sequence[int],
                      avoid: Sequence[int]) -> np.ndarray:
    """``g(i) = P_i(hit target before avoid)``, 1 on target, 0 on avoid.

    Raises
    ------
    NonErgodicInput
        If some state outside both sets cannot reach either of them.
    """
    N = rates.N
    J2 = _as_set(target, N, "target set")
    J1 = _as_set(avoid, N, "return set")
    if np.intersect1d(J1, J2).size:
        raise InvalidInput("target and return sets must be disjoint")
    inJ = np.zeros(N, dtype=bool)
    inJ[J1] = inJ[J2] = True
    adj = rates.rates > 0
    can_exit = _reach(adj.T, np.flatnonzero(inJ), np.zeros(N, dtype=bool))
    U = np.flatnonzero(~inJ)
    g = np.zeros(N)
    g[J2] = 1.0
    if U.size == 0:
        return g
    P = rates.jump_matrix()
    ok = U[can_exit[U]]
    if ok.size:
        A = np.eye(ok.size) - P[np.ix_(ok, ok)]
        b = P[np.ix_(ok, J2)].sum(axis=1)
        try:
            g[ok] = np.linalg.solve(A, b)
        except np.linalg.LinAlgError as exc:
            raise NonErgodicInput("hitting system is singular") from exc
    g[U[~can_exit[U]]] = np.nan
    return g


def hitting_probability(rates: RateMatrix, i: int, targetJ2, returnJ1) -> float:
    """``P_i(H_{J2} < H_{J1}^+)`` from the embedded chain.

    ``H^+`` is the first return time, so the chain always takes one step
    from ``i`` before ``J1`` can stop it; for ``i`` in ``J2`` the answer
    is 1.
    """
    N = rates.N
    J2 = _as_set(targetJ2, N, "target set")
    if i in set(J2.tolist()):
        return 1.0
    g = harmonic_function(rates, J2, returnJ1)
    if rates.holding[i] <= 0:
        raise NonErgodicInput(f"state {i + 1} is absorbing")
    row = rates.jump_matrix()[i]
    support = row > 0
    if np.any(np.isnan(g[support])):
        raise NonErgodicInput(
            f"from state {i + 1} the chain can avoid both sets forever")
    return float(row[support] @ g[support])


def _check_invariant(rates: RateMatrix, pi: np.ndarray, tol: float = 1e-10):
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (rates.N,):
        raise InvalidInput("pi has the wrong length")
    scale = max(1.0, float(np.max(rates.holding)))
    if np.max(np.abs(pi @ rates.generator())) > tol * scale:
        raise InvalidInput("pi is not invariant for the rates")
    return pi


def escape_probabilities(rates: RateMatrix, J1, J2) -> np.ndarray:
    """``P_i(H_{J2} < H_{J1}^+)`` for each ``i`` in ``J1`` (sorted)."""
    J1 = _as_set(J1, rates.N, "J1")
    g = harmonic_function(rates, J2, J1)
    P = rates.jump_matrix()
    out = np.empty(J1.size)
    for k, i in enumerate(J1):
        row = P[i]
        sup = row > 0
        if rates.holding[i] <= 0 or np.any(np.isnan(g[sup])):
            raise NonErgodicInput(f"state {i + 1} cannot reach J1 or J2")
        out[k] = row[sup] @ g[sup]
    return out


def capacity(rates: RateMatrix, pi, J1, J2, check: bool = True) -> float:
    """``cap(J1, J2) = sum_{i in J1} pi(i) lambda(i) P_i(H_{J2} < H_{J1}^+)``."""
    if check:
        pi = _check_invariant(rates, pi)
    J1 = _as_set(J1, rates.N, "J1")
    esc = escape_probabilities(rates, J1, J2)
    return float(np.sum(np.asarray(pi)[J1] * rates.holding[J1] * esc))


def trace_class_rates(rates: RateMatrix, pi, partition: Sequence[Sequence[int]],
                      delta: Sequence[int] = ()) -> Tuple[np.ndarray, np.ndarray]:
    """Trace-process rates on ``E`` and mean class-to-class rates.

    Returns ``(R, r)``.  ``R`` is ``N x N`` with ``R[i, j]`` the rate at
    which the trace on ``E = union(partition)`` jumps from ``i`` to ``j``
    (the diagonal holds excursions that come back to ``i``; rows outside
    ``E`` are zero).  ``r[x, y]`` is the ``pi``-averaged rate from class
    ``x`` to class ``y``, with zero diagonal.
    """
    N = rates.N
    classes = [_as_set(c, N, "class") for c in partition]
    E = np.concatenate(classes)
    D = np.asarray(sorted(set(delta)), dtype=np.int64)
    if np.unique(E).size != E.size or np.intersect1d(E, D).size:
        raise InvalidInput("classes and delta must be disjoint")
    if E.size + D.size != N:
        raise InvalidInput("classes and delta must cover every state")
    pi = np.asarray(pi, dtype=float)
    P = rates.jump_matrix()
    PEE = P[np.ix_(E, E)].copy()
    if D.size:
        PDD = P[np.ix_(D, D)]
        blocked = np.zeros(N, dtype=bool)
        adj = rates.rates > 0
        back = _reach(adj.T, E, blocked)
        if not np.all(back[D]):
            raise NonErgodicInput("some transient state cannot return to E")
        try:
            ret = np.linalg.solve(np.eye(D.size) - PDD, P[np.ix_(D, E)])
        except np.linalg.LinAlgError as exc:
            raise NonErgodicInput("excursion system is singular") from exc
        PEE = PEE + P[np.ix_(E, D)] @ ret
    R = np.zeros((N, N))
    R[np.ix_(E, E)] = rates.holding[E, None] * PEE
    n = len(classes)
    r = np.zeros((n, n))
    for x, cx in enumerate(classes):
        mass = pi[cx].sum()
        if mass <= 0:
            raise NonErgodicInput("class with zero invariant mass")
        for y, cy in enumerate(classes):
            if x != y:
                r[x, y] = pi[cx] @ R[np.ix_(cx, cy)].sum(axis=1) / mass
    return R, r


def hitting_probability_mc(rates: RateMatrix, i: int, targetJ2, returnJ1,
                           n_runs: int, seed: int = 0) -> Tuple[float, float]:
    """Monte Carlo estimate and standard error of ``P_i(H_{J2} < H_{J1}^+)``."""
    N = rates.N
    J2 = _as_set(targetJ2, N, "target set")
    J1 = _as_set(returnJ1, N, "return set")
    if i in set(J2.tolist()):
        return 1.0, 0.0
    in2 = np.zeros(N, dtype=np.bool_)
    in1 = np.zeros(N, dtype=np.bool_)
    in2[J2] = True
    in1[J1] = True
    cdf = _cdf(rates.jump_matrix())
    rng = stream(seed, 0)
    hits = done = 0
    while done < n_runs:
        u = rng.random(max(CHUNK, 4 * (n_runs - done)))
        h, dn, _ = _kernels.hitting_runs(cdf, i, in2, in1, u, n_runs - done)
        if dn == 0:
            raise NonErgodicInput("runs do not terminate")
        hits += h
        done += dn
    p = hits / n_runs
    return p, float(np.sqrt(max(p * (1 - p), 0.0) / n_runs))
