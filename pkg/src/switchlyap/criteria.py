"""Executable equality criteria between Lyapunov exponents.

* fixed-chain equality: every accessible recurrent class must have all its
  products grow exactly at the deterministic rate;
* condition (C) for a hull point ``M`` and a sampled check of the angular
  Lyapunov function built from the real-part splitting of ``M``;
* the gap report, which collects bounds and verdicts for one system.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from . import _kernels
from .ctmc import MarkovParams, stationary_structure, stream
from .detlyap import (BracketConfig, LyapunovBracket, lambda_d_bracket,
                      max_abscissa_over_hull)
from .errors import IllConditionedSplit
from .flows import SwitchedSystem
from .linalg import is_irreducible, real_part_split, skew_shift_certificate
from .pdmp import lambda_p_conv_search, mu_scan

log = logging.getLogger(__name__)

VERDICTS = ("equality", "strict-gap", "inconclusive")
VIOLATION_TOL = 1e-10


@dataclass(frozen=True)
class EqualityVerdict:
    """Outcome of :func:`check_equality_fixed_chain`.

    ``evidence`` lists the largest deviations as
    ``(class, modes, durations, deviation)`` with 1-based modes.
    """

    verdict: str
    evidence: List[Tuple[int, Tuple[int, ...], Tuple[float, ...], float]]
    certified_classes: List[int]
    max_deviation: float
    tol: float
    n_samples: int


def _sample_product(rng, members: np.ndarray, kmax: int = 6):
    k = int(rng.integers(1, kmax + 1))
    idx = members[rng.integers(0, members.size, size=k)]
    dur = 2.0 * (1.0 - rng.random(k))
    return idx.astype(np.int64), dur


def check_equality_fixed_chain(sys: SwitchedSystem, params: MarkovParams,
                               lambda_d_ref: float, samples: int = 10_000,
                               seed: int = 0, tol: Optional[float] = None,
                               keep: int = 10) -> EqualityVerdict:
    """Test whether every accessible class grows at rate ``lambda_d_ref``.

    Products of at most 6 factors with modes from one accessible class and
    durations in ``(0, 2]`` are sampled; sample ``s`` uses stream
    ``(seed, s)`` and class ``s mod R``.  Each class's modes also go
    through :func:`skew_shift_certificate`.
    """
    tol = 1e-6 * (1 + abs(lambda_d_ref)) if tol is None else tol
    st = stationary_structure(params)
    access = [c for c, a in zip(st.classes, st.alphas) if a > 0]
    certified = []
    for r, members in enumerate(access):
        cert = skew_shift_certificate([sys.modes[i] for i in members])
        if cert is not None and abs(cert[0] - lambda_d_ref) <= tol:
            certified.append(r)
    devs = np.empty(samples)
    records = []
    for s in range(samples):
        r = s % len(access)
        rng = stream(seed, s)
        idx, dur = _sample_product(rng, access[r])
        phi, ls = _kernels.propagate_flow(sys.modes, idx, dur)
        rho = np.max(np.abs(np.linalg.eigvals(phi)))
        val = (np.log(rho) + ls) / dur.sum() if rho > 0 else -np.inf
        devs[s] = abs(val - lambda_d_ref)
        records.append((r, idx, dur))
    order = np.argsort(-devs, kind="stable")[:keep]
    evidence = [(int(records[s][0]), tuple(int(i) + 1 for i in records[s][1]),
                 tuple(float(t) for t in records[s][2]), float(devs[s]))
                for s in order]
    worst = float(devs.max()) if samples else 0.0
    if worst > 10 * tol:
        verdict = "strict-gap"
    elif worst <= tol or len(certified) == len(access):
        verdict = "equality"
    else:
        verdict = "inconclusive"
    return EqualityVerdict(verdict, evidence, certified, worst, tol, samples)


@dataclass(frozen=True)
class ConditionCWitness:
    """Per level ``j = 2..k``: best mode (1-based) and its singular value."""

    holds: bool
    witnesses: Dict[int, int]
    singular_values: Dict[int, float]
    all_values: Dict[int, List[float]]
    tol: float
    k: int


def check_condition_C(sys: SwitchedSystem, M, tol: Optional[float] = None,
                      cluster_tol: float = 1e-6) -> ConditionCWitness:
    """Whether some mode pushes every unit vector of each ``E_j`` upward.

    For ``j >= 2`` and each mode, the map ``theta -> pr_{j-1}(A_i theta)``
    on ``E_j`` must be injective; its smallest singular value is compared
    with ``tol`` (default ``1e-8 (1 + K)``).
    """
    tol = 1e-8 * (1 + sys.K) if tol is None else tol
    split = real_part_split(M, cluster_tol)
    wit, best, every = {}, {}, {}
    holds = True
    for j in range(1, split.k):
        B = split.bases[j]
        pr = split.projectors[j - 1]
        vals = []
        for A in sys.modes:
            L = pr @ A @ B
            sv = np.linalg.svd(L, compute_uv=False)
            vals.append(float(sv[B.shape[1] - 1]) if sv.size >= B.shape[1] else 0.0)
        i = int(np.argmax(vals))
        wit[j + 1] = i + 1
        best[j + 1] = vals[i]
        every[j + 1] = vals
        holds = holds and vals[i] > tol
    return ConditionCWitness(holds, wit, best, every, tol, split.k)


def _holds_at(sys, w, tol):
    try:
        return check_condition_C(sys, sys.combination(w), tol).holds
    except IllConditionedSplit:
        return False


def condC_density_probe(sys: SwitchedSystem, n_samples: int = 200,
                        perturb_eps: float = 1e-3, seed: int = 0,
                        tries: int = 8) -> Dict[str, object]:
    """Fraction of hull points with condition (C), before and after nudging.

    A failing weight vector is moved up to ``tries`` times to random
    points within ``perturb_eps`` (in the 1-norm) on the simplex.
    ``caveat`` flags inputs outside the guaranteed regime (``d > 3`` or a
    reducible tuple).
    """
    caveat = sys.d > 3 or not is_irreducible(list(sys.modes))
    before = after = 0
    for s in range(n_samples):
        rng = stream(seed, s)
        w = rng.dirichlet(np.ones(sys.N))
        if _holds_at(sys, w, None):
            before += 1
            after += 1
            continue
        for _ in range(tries):
            step = rng.dirichlet(np.ones(sys.N)) - w
            w2 = w + perturb_eps * step / max(np.abs(step).sum(), 1e-300)
            if _holds_at(sys, w2, None):
                after += 1
                break
    return {"n_samples": n_samples, "fraction_before": before / n_samples,
            "fraction_after": after / n_samples, "caveat": bool(caveat),
            "perturb_eps": perturb_eps}


def _phi(t):
    return t + t * t


def _dphi(t):
    return 1 + 2 * t


def adapted_coordinates(M, cluster_tol: float = 1e-6,
                        max_halvings: int = 200):
    """Coordinates where ``M`` is block diagonal with nearly scalar sym parts.

    Returns ``(T, Mc, dims, xi, eps)`` with ``Mc = T^-1 M T``.  Inside each
    real-part block the real Schur form is taken, 2x2 bumps are put in
    ``[[a, b], [-b, a]]`` form and strictly upper parts are damped by a
    diagonal scaling until ``|sym(M_j) - xi_j I| < gap / 4``.
    """
    split = real_part_split(M, cluster_tol)
    M = np.asarray(M, dtype=float)
    V = split.change_of_basis
    blocks_T, blocks_U = [], []
    for j, B in enumerate(split.bases):
        Mj = np.linalg.solve(V, M @ V)
        lo = sum(split.dims[:j])
        Mj = Mj[lo:lo + B.shape[1], lo:lo + B.shape[1]]
        U, Z = scipy.linalg.schur(Mj, output="real")
        n = U.shape[0]
        S = np.eye(n)
        units = []
        i = 0
        while i < n:
            if i + 1 < n and abs(U[i + 1, i]) > 0:
                w, v = np.linalg.eig(U[i:i + 2, i:i + 2])
                z = v[:, np.argmax(w.imag)]
                S[i:i + 2, i:i + 2] = np.column_stack([z.real, z.imag])
                units.append((i, 2))
                i += 2
            else:
                units.append((i, 1))
                i += 1
        blocks_T.append(Z @ S)
        blocks_U.append((np.linalg.solve(S, U @ S), units))
    gaps = -np.diff(split.xi)
    target = (gaps.min() / 4) if gaps.size else np.inf
    eta = 1.0
    for _ in range(max_halvings):
        eps = 0.0
        for (Uj, units), xi in zip(blocks_U, split.xi):
            D = np.ones(Uj.shape[0])
            for p, (start, size) in enumerate(units):
                D[start:start + size] = eta ** p
            Us = Uj * D[None, :] / D[:, None]
            sym = 0.5 * (Us + Us.T)
            eps = max(eps, float(np.max(np.abs(np.linalg.eigvalsh(sym) - xi))))
        if eps < target or gaps.size == 0:
            break
        eta *= 0.5
    Ts = []
    for Tj, (Uj, units) in zip(blocks_T, blocks_U):
        D = np.ones(Uj.shape[0])
        for p, (start, size) in enumerate(units):
            D[start:start + size] = eta ** p
        Ts.append(Tj * D[None, :])
    T = V @ scipy.linalg.block_diag(*Ts)
    Mc = np.linalg.solve(T, M @ T)
    return T, Mc, split.dims, split.xi, eps


def _h_parts(y, bounds):
    """Per-group squared norms of sphere points ``y`` (rows)."""
    return np.stack([np.sum(y[:, a:b] ** 2, axis=1) for a, b in bounds], axis=1)


def angular_function(y, bounds):
    """``h(y) = sum_{j<k} (|y_V|^2 + phi(|y_W|^2)) / 2`` and its ambient gradient."""
    g = _h_parts(y, bounds)
    k = len(bounds)
    h = np.zeros(y.shape[0])
    grad = np.zeros_like(y)
    for j in range(1, k):
        head = g[:, :j].sum(axis=1)
        tail = g[:, j:].sum(axis=1)
        h += 0.5 * (head + _phi(tail))
        cut = bounds[j][0]
        grad[:, :cut] += y[:, :cut]
        grad[:, cut:] += _dphi(tail)[:, None] * y[:, cut:]
    return h, grad


def _decrease_rate(y, Mc, bounds):
    """``grad h . F_M`` written blockwise so no cancellation occurs.

    With ``w_l = |y_l|^2`` and Rayleigh quotients ``a_l`` of the diagonal
    blocks, each ``h_j`` contributes
    ``-2 t_j sum_{l <= j < i} w_l w_i (a_l - a_i)``.
    """
    k = len(bounds)
    w = _h_parts(y, bounds)
    a = np.zeros_like(w)
    for l, (lo, hi) in enumerate(bounds):
        yl = y[:, lo:hi]
        num = np.einsum("si,ij,sj->s", yl, Mc[lo:hi, lo:hi], yl)
        a[:, l] = np.divide(num, w[:, l], out=np.zeros_like(num),
                            where=w[:, l] > 0)
    rate = np.zeros(y.shape[0])
    for j in range(1, k):
        t = w[:, j:].sum(axis=1)
        acc = np.zeros(y.shape[0])
        for l in range(j):
            for i in range(j, k):
                acc += w[:, l] * w[:, i] * (a[:, l] - a[:, i])
        rate += -2.0 * t * acc
    return rate


def _block_coupling(Mc, bounds):
    mask = np.ones_like(Mc, dtype=bool)
    for lo, hi in bounds:
        mask[lo:hi, lo:hi] = False
    return np.max(np.abs(Mc[mask])) if mask.any() else 0.0


def sampled_lyapunov_certificate(M, n_sphere_samples: int = 10_000,
                                 seed: int = 0, min_dist: float = 1e-6,
                                 cluster_tol: float = 1e-6) -> Dict[str, object]:
    """Sample the angular Lyapunov function on the unit sphere.

    In adapted coordinates (see :func:`adapted_coordinates`) reports:
    ``min_decrease`` = min of ``-grad h . F_M`` over samples at distance at
    least ``min_dist`` from every ``E_i`` (positive means no violation), the
    gradient size on the ``E_i``, the range of ``h`` versus
    ``[(k-1)/2, k-1]`` and the Hessian bound on each ``E_i``.
    """
    T, Mc, dims, xi, eps = adapted_coordinates(M, cluster_tol)
    d = Mc.shape[0]
    k = len(dims)
    edges = np.concatenate([[0], np.cumsum(dims)])
    bounds = [(int(edges[j]), int(edges[j + 1])) for j in range(k)]
    rng = stream(seed, 0)
    y = rng.standard_normal((n_sphere_samples, d))
    y /= np.linalg.norm(y, axis=1, keepdims=True)
    parts = _h_parts(y, bounds)
    dist = np.sqrt(np.clip(1 - parts, 0, None)).min(axis=1)
    off = dist >= min_dist
    h, _ = angular_function(y, bounds)
    rate = _decrease_rate(y, Mc, bounds)
    viol = np.flatnonzero(off & (rate >= 0))
    report = {"k": k, "dims": list(dims), "xi": [float(v) for v in xi],
              "eps": float(eps), "n_samples": int(n_sphere_samples),
              "n_off_axes": int(off.sum()),
              "min_decrease": float(-rate[off].max()) if off.any() else None,
              "block_coupling": float(_block_coupling(Mc, bounds)),
              "sign_violations": int(viol.size),
              "violation_points": [(T @ y[i]).tolist() for i in viol[:5]]}
    # on each E_i: gradient, values and Hessian bound
    grad_max = hess_max = 0.0
    hvals = []
    lo, hi = (k - 1) / 2, k - 1
    for i, (a, b) in enumerate(bounds):
        for _ in range(20):
            z = np.zeros(d)
            z[a:b] = rng.standard_normal(b - a)
            z /= np.linalg.norm(z)
            hz, gz = angular_function(z[None], bounds)
            gt = gz[0] - (z @ gz[0]) * z
            grad_max = max(grad_max, float(np.linalg.norm(gt)))
            hvals.append((i, float(hz[0])))
            if k > 1:
                v = rng.standard_normal(d)
                v -= (v @ z) * z
                v /= np.linalg.norm(v)
                quad = 0.0
                for j in range(1, k):
                    cut = bounds[j][0]
                    tail = float(np.sum(z[cut:] ** 2))
                    dd = np.concatenate([np.ones(cut), np.full(d - cut, _dphi(tail))])
                    wv = v[cut:] @ z[cut:]
                    quad += np.sum(dd * v * v) + 4.0 * wv * wv
                quad -= z @ gz[0]
                proj = float(np.sum(v[:bounds[i][0]] ** 2))
                hess_max = max(hess_max, float(quad + proj))
    e1 = [v for i, v in hvals if i == 0]
    ek = [v for i, v in hvals if i == k - 1]
    report.update({
        "grad_on_axes_max": grad_max,
        "h_min_sampled": float(h.min()) if k > 1 else 0.0,
        "h_max_sampled": float(h.max()) if k > 1 else 0.0,
        "h_on_E1": float(np.mean(e1)) if k > 1 else 0.0,
        "h_on_Ek": float(np.mean(ek)) if k > 1 else 0.0,
        "range_violation": float(max(0.0, lo - h.min(), h.max() - hi)) if k > 1 else 0.0,
        "hessian_violation": max(0.0, hess_max)})
    report["violations"] = int(report["sign_violations"]
                               + (grad_max > VIOLATION_TOL)
                               + (report["range_violation"] > VIOLATION_TOL)
                               + (report["hessian_violation"] > VIOLATION_TOL))
    return report


@dataclass(frozen=True)
class GapConfig:
    bracket: BracketConfig = field(default_factory=BracketConfig)
    hull_starts: int = 8
    mu_list: Tuple[float, ...] = (1.0, 10.0, 100.0, 1000.0)
    T: float = 200.0
    n_traj: int = 32
    conv_candidates: int = 4
    tol: float = 1e-6
    perturb_eps: float = 1e-3
    seed: int = 0
    threads: int = 1


def gap_report(sys: SwitchedSystem, config: Optional[GapConfig] = None) -> Dict[str, object]:
    """Bounds and verdicts around ``lambda_d``, ``lambda_p^conv``, ``lambda_p^sup``.

    ``hull <= lambda_p^conv <= lambda_d <= upper`` always, so
    ``upper - hull <= tol`` certifies equality of the first pair.  The sup
    verdict is only attempted when ``d <= 3`` or condition (C) holds at the
    hull argmax or at one of 8 nearby hull points.
    """
    cfg = config or GapConfig()
    br = lambda_d_bracket(sys, cfg.bracket)
    hull, beta = max_abscissa_over_hull(sys, cfg.hull_starts, cfg.seed)
    conv = lambda_p_conv_search(sys, hull, beta, cfg.conv_candidates,
                                seed=cfg.seed, threads=cfg.threads)
    scan = mu_scan(sys, beta, cfg.mu_list, cfg.T, cfg.n_traj, cfg.seed,
                   cfg.threads)
    M = sys.combination(beta)
    try:
        cc = check_condition_C(sys, M)
        c_here = cc.holds
    except IllConditionedSplit:
        c_here = False
    c_near = c_here
    rng = stream(cfg.seed, 1 << 40)
    for _ in range(8):
        if c_near:
            break
        step = rng.dirichlet(np.ones(sys.N)) - beta
        w = beta + cfg.perturb_eps * step / max(np.abs(step).sum(), 1e-300)
        c_near = _holds_at(sys, w, None)
    tol = cfg.tol
    if br.upper - hull <= tol:
        conv_verdict = "equality"
        conv_note = "hull abscissa meets the quadratic-norm upper bound"
    elif hull < br.lower - tol:
        conv_verdict = "strict-gap"
        conv_note = "product growth exceeds every hull abscissa found (evidence)"
    else:
        conv_verdict = "inconclusive"
        conv_note = "bracket too wide to compare with the hull abscissa"
    if conv_verdict == "equality" and (sys.d <= 3 or c_near):
        sup_verdict = "equality"
        sup_note = ("d <= 3" if sys.d <= 3 else "condition (C) near the argmax")
    elif conv_verdict == "strict-gap" and sys.d <= 3:
        sup_verdict = "strict-gap"
        sup_note = "no hull point reaches lambda_d (evidence)"
    elif sys.d > 3 and not c_near:
        sup_verdict = "inconclusive"
        sup_note = "d > 3 and condition (C) not found near the argmax"
    else:
        sup_verdict = "inconclusive"
        sup_note = "equality with the hull not established"
    not_attained = all(e.value + 3 * e.stderr < br.upper - tol for e in scan)
    return {
        "lambda_d": {"lower": br.lower, "upper": br.upper, "gap": br.gap,
                     "witness": [[t, i + 1] for t, i in br.lower_witness.segments],
                     "Q": br.upper_norm.tolist()},
        "hull": {"value": hull, "weights": beta.tolist()},
        "lambda_p_conv_lower": conv,
        "mu_scan": [{"mu": float(mu), "value": e.value, "stderr": e.stderr,
                     "T": e.T, "n_traj": e.n_traj}
                    for mu, e in zip(cfg.mu_list, scan)],
        "condition_C": {"at_argmax": bool(c_here), "near_argmax": bool(c_near)},
        "verdicts": {"lambda_d_vs_lambda_p_conv": conv_verdict,
                     "lambda_d_vs_lambda_p_conv_note": conv_note,
                     "lambda_d_vs_lambda_p_sup": sup_verdict,
                     "lambda_d_vs_lambda_p_sup_note": sup_note,
                     "lambda_p_sup_not_attained": bool(not_attained)},
        "tol": tol,
    }
