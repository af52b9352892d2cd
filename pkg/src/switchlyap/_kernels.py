"""JIT-compiled inner loops.

Everything here works on plain float64/int64 arrays so that the callers in
the public modules can stay in ordinary numpy.  The matrix exponential is
the scaling-and-squaring Pade scheme of Higham (2005); it is used both by
:func:`switchlyap.linalg.matrix_exponential` and by the simulation loops.
"""
import math

import numpy as np
from numba import njit

_THETA = np.array([1.495585217958292e-2, 2.539398330063230e-1,
                   9.504178996162932e-1, 2.097847961257068e0,
                   5.371920351148152e0])

_B3 = np.array([120.0, 60.0, 12.0, 1.0])
_B5 = np.array([30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0])
_B7 = np.array([17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0,
                1512.0, 56.0, 1.0])
_B9 = np.array([17643225600.0, 8821612800.0, 2075673600.0, 302702400.0,
                30270240.0, 2162160.0, 110880.0, 3960.0, 90.0, 1.0])
_B13 = np.array([64764752532480000.0, 32382376266240000.0,
                 7771770303897600.0, 1187353796428800.0, 129060195264000.0,
                 10559470521600.0, 670442572800.0, 33522128640.0,
                 1323241920.0, 40840800.0, 960960.0, 16380.0, 182.0, 1.0])


@njit(cache=True)
def _norm1(a):
    n = a.shape[0]
    best = 0.0
    for j in range(n):
        s = 0.0
        for i in range(n):
            s += abs(a[i, j])
        if s > best:
            best = s
    return best


@njit(cache=True)
def lu_solve(a, b):
    """Solve ``a @ x = b`` by Gaussian elimination with partial pivoting."""
    n = a.shape[0]
    m = b.shape[1]
    a = a.copy()
    x = b.copy()
    for k in range(n):
        p = k
        big = abs(a[k, k])
        for i in range(k + 1, n):
            if abs(a[i, k]) > big:
                big = abs(a[i, k])
                p = i
        if p != k:
            for j in range(n):
                tmp = a[k, j]
                a[k, j] = a[p, j]
                a[p, j] = tmp
            for j in range(m):
                tmp = x[k, j]
                x[k, j] = x[p, j]
                x[p, j] = tmp
        piv = a[k, k]
        for i in range(k + 1, n):
            f = a[i, k] / piv
            if f != 0.0:
                for j in range(k + 1, n):
                    a[i, j] -= f * a[k, j]
                for j in range(m):
                    x[i, j] -= f * x[k, j]
    for k in range(n - 1, -1, -1):
        for j in range(m):
            s = x[k, j]
            for i in range(k + 1, n):
                s -= a[k, i] * x[i, j]
            x[k, j] = s / a[k, k]
    return x


@njit(cache=True)
def expm(a):
    """Matrix exponential of a square float64 array."""
    n = a.shape[0]
    ident = np.eye(n)
    nrm = _norm1(a)
    if nrm == 0.0:
        return ident
    if nrm <= _THETA[3]:
        a2 = a @ a
        if nrm <= _THETA[0]:
            b = _B3
            u = a @ (b[3] * a2 + b[1] * ident)
            v = b[2] * a2 + b[0] * ident
        elif nrm <= _THETA[1]:
            b = _B5
            a4 = a2 @ a2
            u = a @ (b[5] * a4 + b[3] * a2 + b[1] * ident)
            v = b[4] * a4 + b[2] * a2 + b[0] * ident
        elif nrm <= _THETA[2]:
            b = _B7
            a4 = a2 @ a2
            a6 = a4 @ a2
            u = a @ (b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident)
            v = b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident
        else:
            b = _B9
            a4 = a2 @ a2
            a6 = a4 @ a2
            a8 = a6 @ a2
            u = a @ (b[9] * a8 + b[7] * a6 + b[5] * a4 + b[3] * a2
                     + b[1] * ident)
            v = b[8] * a8 + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident
        return lu_solve(v - u, v + u)
    s = max(0, int(math.ceil(math.log2(nrm / _THETA[4]))))
    a = a / (2.0 ** s)
    b = _B13
    a2 = a @ a
    a4 = a2 @ a2
    a6 = a4 @ a2
    u = a @ (a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2)
             + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident)
    v = (a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2)
         + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident)
    r = lu_solve(v - u, v + u)
    for _ in range(s):
        r = r @ r
    return r


@njit(cache=True)
def _maxabs(a):
    best = 0.0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            if abs(a[i, j]) > best:
                best = abs(a[i, j])
    return best


@njit(cache=True, nogil=True)
def propagate_flow_from(modes, states, durations, phi, logscale):
    """Continue ``exp(logscale) * phi`` along further segments.

    Consecutive segments in the same mode are merged before
    exponentiating (then split again into pieces with 1-norm at most 64);
    the running product is rescaled whenever its largest
    entry leaves ``[1e-64, 1e64]``.
    """
    m = states.shape[0]
    k = 0
    while k < m:
        mode = states[k]
        tau = durations[k]
        k += 1
        while k < m and states[k] == mode:
            tau += durations[k]
            k += 1
        if tau == 0.0:
            continue
        # long pieces are split so one factor cannot overflow
        pieces = max(1, int(math.ceil(_norm1(modes[mode]) * tau / 64.0)))
        step = expm(modes[mode] * (tau / pieces))
        for _ in range(pieces):
            phi = step @ phi
            big = _maxabs(phi)
            if big > 1e64 or big < 1e-64:
                if big == 0.0:
                    return phi, -np.inf
                phi = phi / big
                logscale += math.log(big)
    return phi, logscale


@njit(cache=True, nogil=True)
def propagate_flow(modes, states, durations):
    """Ordered product of segment exponentials as ``(phi, logscale)``.

    The flow equals ``exp(logscale) * phi``.
    """
    return propagate_flow_from(modes, states, durations,
                               np.eye(modes.shape[1]), 0.0)


@njit(cache=True, nogil=True)
def chain_states(cdf, first, u):
    """Destinations of successive jumps of a discrete chain.

    ``cdf[i]`` is the cumulative row ``i`` of the jump matrix; ``u`` holds
    one uniform per jump.  Returns the state after each jump, prefixed by
    ``first``.
    """
    m = u.shape[0]
    n = cdf.shape[1]
    out = np.empty(m + 1, dtype=np.int64)
    out[0] = first
    s = first
    for k in range(m):
        row = cdf[s]
        x = u[k] * row[n - 1]
        j = 0
        while j < n - 1 and row[j] <= x:
            j += 1
        s = j
        out[k + 1] = s
    return out


@njit(cache=True, nogil=True)
def gillespie_chunk(hold, cdf, state, t, horizon, exps, us, occupation):
    """Advance a rate-matrix chain using pre-drawn randomness.

    ``exps`` are unit exponentials and ``us`` uniforms.  Occupation times on
    ``[0, horizon]`` are accumulated in place.  Returns
    ``(state, t, used, done)``.
    """
    n = cdf.shape[1]
    used = 0
    m = exps.shape[0]
    while used < m:
        rate = hold[state]
        if rate <= 0.0:
            occupation[state] += horizon - t
            return state, horizon, used, True
        dt = exps[used] / rate
        if t + dt >= horizon:
            occupation[state] += horizon - t
            return state, horizon, used + 1, True
        occupation[state] += dt
        t += dt
        row = cdf[state]
        x = us[used] * row[n - 1]
        j = 0
        while j < n - 1 and row[j] <= x:
            j += 1
        state = j
        used += 1
    return state, t, used, False


@njit(cache=True, nogil=True)
def angular_occupation(modes, states, durations, x0, basis, max_step,
                       burn_in, eps):
    """Time fraction after ``burn_in`` with angle(x/|x|, span(basis)) <= eps.

    Segments longer than ``max_step`` are subdivided; the indicator is
    evaluated at the right end of each piece and weighted by its length.
    """
    x = x0.copy()
    t = 0.0
    inside = 0.0
    total = 0.0
    cos_eps = math.cos(eps)
    m = states.shape[0]
    for k in range(m):
        tau = durations[k]
        if tau <= 0.0:
            continue
        pieces = max(1, int(math.ceil(tau / max_step)))
        h = tau / pieces
        e = expm(modes[states[k]] * h)
        for _ in range(pieces):
            x = e @ x
            nx = math.sqrt(np.sum(x * x))
            x = x / nx
            t += h
            if t > burn_in:
                w = min(h, t - burn_in)
                c = math.sqrt(np.sum((basis.T @ x) ** 2))
                total += w
                if c >= cos_eps:
                    inside += w
    if total == 0.0:
        return 0.0
    return inside / total


@njit(cache=True, nogil=True)
def coupled_sup(slow_modes, fast_modes, dts, slow_idx, fast_idx, x0,
                max_step):
    """sup over the timeline of |x - x_n| for two piecewise-linear flows."""
    x = x0.copy()
    y = x0.copy()
    best = 0.0
    for k in range(dts.shape[0]):
        tau = dts[k]
        if tau <= 0.0:
            continue
        pieces = max(1, int(math.ceil(tau / max_step)))
        h = tau / pieces
        ex = expm(slow_modes[slow_idx[k]] * h)
        ey = expm(fast_modes[fast_idx[k]] * h)
        for _ in range(pieces):
            x = ex @ x
            y = ey @ y
            diff = math.sqrt(np.sum((x - y) ** 2))
            if diff > best:
                best = diff
    return best


@njit(cache=True, nogil=True)
def hitting_runs(cdf, start, in_j2, in_j1, u, n_runs):
    """Monte Carlo of the embedded chain until it hits J2 or returns to J1.

    Each run starts at ``start`` and takes at least one step.  Returns
    ``(successes, runs_done, uniforms_used)``; stops early when ``u`` is
    exhausted mid-run (that run is discarded).
    """
    n = cdf.shape[1]
    used = 0
    done = 0
    hits = 0
    m = u.shape[0]
    while done < n_runs:
        s = start
        pos = used
        finished = False
        while pos < m:
            row = cdf[s]
            x = u[pos] * row[n - 1]
            pos += 1
            j = 0
            while j < n - 1 and row[j] <= x:
                j += 1
            s = j
            if in_j2[s]:
                hits += 1
                finished = True
                break
            if in_j1[s]:
                finished = True
                break
        if not finished:
            break
        used = pos
        done += 1
    return hits, done, used
