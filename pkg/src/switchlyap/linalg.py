"""Dense linear algebra for small mode tuples.

Matrix exponentials, spectra, the splitting of R^d by real parts of the
eigenvalues, an irreducibility test for matrix tuples, and a certificate
that a tuple is a common scalar shift of skew-symmetric matrices.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from . import _kernels
from .errors import IllConditionedSplit, InvalidInput


def as_matrix(A, name: str = "matrix") -> np.ndarray:
    """Validate and return ``A`` as a finite square float64 array."""
    a = np.array(A, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise InvalidInput(f"{name} must be a nonempty square matrix, "
                           f"got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInput(f"{name} has non-finite entries")
    return a


def matrix_exponential(A, t: float = 1.0) -> np.ndarray:
    """Return ``exp(A t)``.

    Scaling and squaring with a diagonal Pade approximant of degree chosen
    from the 1-norm of ``A t``.
    """
    a = as_matrix(A)
    t = float(t)
    if not np.isfinite(t):
        raise InvalidInput("time must be finite")
    return _kernels.expm(np.ascontiguousarray(a * t))


def spectral_radius(A) -> float:
    """Largest eigenvalue modulus."""
    return float(np.max(np.abs(np.linalg.eigvals(as_matrix(A)))))


def spectral_abscissa(A) -> float:
    """Largest real part of an eigenvalue."""
    return float(np.max(np.linalg.eigvals(as_matrix(A)).real))


@dataclass(frozen=True)
class RealPartSplit:
    """Splitting of R^d into sums of generalized eigenspaces.

    Attributes
    ----------
    xi : ndarray
        Distinct real parts, strictly decreasing (group means).
    bases : list of ndarray
        ``bases[j]`` has orthonormal columns spanning ``E_{j+1}``.
    projectors : list of ndarray
        ``projectors[j]`` projects onto ``E_1 + ... + E_{j+1}`` along the
        remaining spaces; the last one is the identity.
    """

    xi: np.ndarray
    bases: List[np.ndarray]
    projectors: List[np.ndarray]

    @property
    def k(self) -> int:
        return len(self.xi)

    @property
    def dims(self) -> List[int]:
        return [b.shape[1] for b in self.bases]

    @property
    def change_of_basis(self) -> np.ndarray:
        """Columns of all bases side by side, dominant group first."""
        return np.hstack(self.bases)


def _cluster_real_parts(re: np.ndarray, tol: float) -> List[Tuple[float, float]]:
    """Group sorted real parts; returns (high, low) bounds per group."""
    order = np.sort(re)[::-1]
    groups = [[order[0]]]
    for x in order[1:]:
        if groups[-1][-1] - x <= tol:
            groups[-1].append(x)
        else:
            groups.append([x])
    return [(g[0], g[-1]) for g in groups]


def real_part_split(A, cluster_tol: float = 1e-6,
                    max_cond: float = 1e12) -> RealPartSplit:
    """Split by real parts of eigenvalues.

    Eigenvalues whose real parts are within ``cluster_tol * (1 + |A|)`` of
    a neighbour share a group (chained, so groups may be wider).  Each
    group's invariant subspace is read off an ordered real Schur form.

    Raises
    ------
    IllConditionedSplit
        If a reordered Schur form does not isolate the expected number of
        eigenvalues, or the joint basis is numerically singular.
    """
    a = as_matrix(A)
    if not cluster_tol > 0:
        raise InvalidInput("cluster_tol must be positive")
    d = a.shape[0]
    tol = cluster_tol * (1.0 + np.linalg.norm(a, 2))
    ev = np.linalg.eigvals(a)
    groups = _cluster_real_parts(ev.real, tol)
    bases = []
    xi = []
    for hi, lo in groups:
        members = (ev.real <= hi + tol / 2) & (ev.real >= lo - tol / 2)
        m = int(np.count_nonzero(members))
        xi.append(float(np.mean(ev.real[members])))
        if len(groups) == 1:
            bases.append(np.eye(d))
            break

        def select(re, im, hi=hi, lo=lo):
            return (re <= hi + tol / 2) & (re >= lo - tol / 2)

        _, z, sdim = scipy.linalg.schur(a, output="real", sort=select)
        if sdim != m:
            raise IllConditionedSplit(
                f"Schur reordering isolated {sdim} eigenvalues, expected {m}")
        bases.append(z[:, :m])
    v = np.hstack(bases)
    if v.shape[1] != d:
        raise IllConditionedSplit("group dimensions do not add up to d")
    if np.linalg.cond(v) > max_cond:
        raise IllConditionedSplit("eigenspace basis is numerically singular")
    vinv = np.linalg.inv(v)
    projectors = []
    upto = 0
    for b in bases:
        upto += b.shape[1]
        projectors.append(v[:, :upto] @ vinv[:upto, :])
    projectors[-1] = np.eye(d)
    return RealPartSplit(np.array(xi), bases, projectors)


def is_irreducible(A_tuple: Sequence, tol: float = 1e-9) -> bool:
    """Whether the tuple has no common invariant subspace other than 0, R^d.

    Burnside's theorem: this is the case iff the algebra generated by the
    identity and the matrices is all of M_d.  The algebra is spanned by
    words of length at most ``d**2 - 1``; it is grown breadth first with
    Gram-Schmidt on the flattened matrices.
    """
    mats = [as_matrix(a) for a in A_tuple]
    d = mats[0].shape[0]
    if any(m.shape != (d, d) for m in mats):
        raise InvalidInput("all matrices must share one dimension")
    if d == 1:
        return True
    gens = []
    for m in mats:
        nrm = np.linalg.norm(m)
        if nrm > 0:
            gens.append(m / nrm)
    basis = [np.eye(d).ravel() / np.sqrt(d)]
    frontier = [np.eye(d)]
    target = d * d
    for _ in range(target - 1):
        new = []
        for x in frontier:
            for g in gens:
                y = (g @ x).ravel()
                for _ in range(2):
                    for b in basis:
                        y = y - (b @ y) * b
                nrm = np.linalg.norm(y)
                if nrm > tol:
                    y = y / nrm
                    basis.append(y)
                    new.append(y.reshape(d, d))
                    if len(basis) == target:
                        return True
        if not new:
            break
        frontier = new
    return len(basis) == target


def _sym_basis(d: int) -> List[np.ndarray]:
    out = []
    for i in range(d):
        for j in range(i, d):
            e = np.zeros((d, d))
            if i == j:
                e[i, i] = 1.0
            else:
                e[i, j] = e[j, i] = 1.0 / np.sqrt(2.0)
            out.append(e)
    return out


def _max_min_eig(mats: List[np.ndarray], rng: np.random.Generator,
                 restarts: int = 50, steps: int = 300) -> np.ndarray:
    """Maximize lambda_min(sum w_k mats[k]) over the unit sphere of w."""
    m = len(mats)
    stack = np.array(mats)

    def value(w):
        s = np.tensordot(w, stack, axes=1)
        vals, vecs = np.linalg.eigh(s)
        return vals[0], vecs[:, 0]

    best_w, best_v = None, -np.inf
    for r in range(restarts):
        w = rng.standard_normal(m) if r else np.ones(m)
        w /= np.linalg.norm(w)
        val, vec = value(w)
        step = 0.5
        for _ in range(steps):
            grad = np.einsum("i,kij,j->k", vec, stack, vec)
            trial = w + step * grad
            trial /= np.linalg.norm(trial)
            tv, tvec = value(trial)
            if tv > val:
                w, val, vec = trial, tv, tvec
                step *= 1.5
            else:
                step *= 0.5
                if step < 1e-14:
                    break
        if val > best_v:
            best_w, best_v = w, val
    return best_w


def skew_shift_certificate(A_tuple: Sequence, tol: float = 1e-8,
                           seed: int = 0) -> Optional[Tuple[float, np.ndarray]]:
    """Find ``c`` and SPD ``Q`` with ``Q(A_i - cI)`` skew for every ``i``.

    Returns ``None`` when the traces disagree or the symmetric null space
    of the stacked map ``Q -> Q B_i + B_i^T Q`` contains no positive
    definite element.  ``Q`` is scaled to unit largest eigenvalue.
    """
    mats = [as_matrix(a) for a in A_tuple]
    if not mats:
        raise InvalidInput("empty tuple")
    d = mats[0].shape[0]
    if any(m.shape != (d, d) for m in mats):
        raise InvalidInput("all matrices must share one dimension")
    c = float(np.trace(mats[0]) / d)
    if any(abs(np.trace(m) / d - c) > tol for m in mats):
        return None
    shifted = [m - c * np.eye(d) for m in mats]
    sbasis = _sym_basis(d)
    cols = []
    for s in sbasis:
        cols.append(np.concatenate([(s @ b + b.T @ s).ravel()
                                    for b in shifted]))
    L = np.array(cols).T
    _, sv, vt = np.linalg.svd(L)
    sv = np.concatenate([sv, np.zeros(vt.shape[0] - sv.size)])
    null = vt[sv <= tol]
    if null.shape[0] == 0:
        return None
    elems = [np.tensordot(w, np.array(sbasis), axes=1) for w in null]
    if len(elems) == 1:
        q = elems[0]
        if np.trace(q) < 0:
            q = -q
    else:
        w = _max_min_eig(elems, np.random.default_rng(seed))
        q = np.tensordot(w, np.array(elems), axes=1)
    q = 0.5 * (q + q.T)
    vals = np.linalg.eigvalsh(q)
    if vals[0] <= 0:
        return None
    q = q / vals[-1]
    if vals[0] / vals[-1] <= tol:
        return None
    res = max(np.linalg.norm(q @ b + b.T @ q, 2) for b in shifted)
    if res > tol:
        return None
    return c, q
