"""Switched systems, switching signals and their fundamental flows."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from . import _kernels
from .errors import InvalidInput, InvalidSignal
from .linalg import as_matrix


@dataclass(frozen=True)
class SwitchedSystem:
    """Tuple of modes ``A_1, ..., A_N`` acting on R^d.

    ``modes`` is stored as a read-only ``(N, d, d)`` array.  ``K`` is the
    largest operator 2-norm among the modes.
    """

    modes: np.ndarray
    K: float = field(init=False)

    def __post_init__(self):
        mats = [as_matrix(m, f"mode {i + 1}") for i, m in enumerate(self.modes)]
        if not mats:
            raise InvalidInput("a switched system needs at least one mode")
        d = mats[0].shape[0]
        if any(m.shape != (d, d) for m in mats):
            raise InvalidInput("all modes must have the same dimension")
        arr = np.ascontiguousarray(np.array(mats))
        arr.setflags(write=False)
        object.__setattr__(self, "modes", arr)
        object.__setattr__(self, "K",
                           float(max(np.linalg.norm(m, 2) for m in mats)))

    @property
    def N(self) -> int:
        return self.modes.shape[0]

    @property
    def d(self) -> int:
        return self.modes.shape[1]

    def shifted(self, c: float) -> "SwitchedSystem":
        """System with every mode replaced by ``A_i + c I``."""
        return SwitchedSystem(self.modes + c * np.eye(self.d))

    def conjugated(self, T) -> "SwitchedSystem":
        """System with modes ``T A_i T^{-1}``."""
        T = as_matrix(T)
        Ti = np.linalg.inv(T)
        return SwitchedSystem(np.array([T @ m @ Ti for m in self.modes]))

    def combination(self, weights) -> np.ndarray:
        """``sum_i weights[i] A_i``."""
        return np.tensordot(np.asarray(weights, dtype=float), self.modes, 1)


@dataclass(frozen=True)
class Signal:
    """Finite piecewise-constant switching law.

    Modes are 0-based here; files and user-facing output use 1-based
    labels.
    """

    durations: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        dur = np.ascontiguousarray(np.asarray(self.durations, dtype=float))
        st = np.ascontiguousarray(np.asarray(self.states, dtype=np.int64))
        if dur.ndim != 1 or dur.shape != st.shape:
            raise InvalidSignal("durations and modes must be 1-d and aligned")
        if dur.size == 0:
            raise InvalidSignal("a signal needs at least one segment")
        if not np.all(np.isfinite(dur)) or np.any(dur < 0):
            raise InvalidSignal("durations must be finite and nonnegative")
        dur.setflags(write=False)
        st.setflags(write=False)
        object.__setattr__(self, "durations", dur)
        object.__setattr__(self, "states", st)

    @classmethod
    def from_segments(cls, segments: Iterable[Tuple[float, int]]) -> "Signal":
        segs = list(segments)
        return cls([s[0] for s in segs], [s[1] for s in segs])

    @property
    def segments(self) -> List[Tuple[float, int]]:
        return [(float(t), int(i)) for t, i in zip(self.durations, self.states)]

    @property
    def total_time(self) -> float:
        return float(np.sum(self.durations))

    def __add__(self, other: "Signal") -> "Signal":
        return Signal(np.concatenate([self.durations, other.durations]),
                      np.concatenate([self.states, other.states]))

    def truncated(self, t: float) -> "Signal":
        """Restriction of the signal to ``[0, t]``."""
        ends = np.cumsum(self.durations)
        if t < 0 or t > ends[-1] * (1 + 1e-12) + 1e-300:
            raise InvalidInput(f"time {t} outside [0, {ends[-1]}]")
        k = int(np.searchsorted(ends, t, side="left"))
        k = min(k, len(ends) - 1)
        dur = np.array(self.durations[:k + 1])
        dur[k] = max(0.0, t - (ends[k - 1] if k else 0.0))
        return Signal(dur, self.states[:k + 1])


def _check(sys: SwitchedSystem, sig: Signal):
    if np.any(sig.states < 0) or np.any(sig.states >= sys.N):
        raise InvalidSignal(f"signal uses a mode outside 1..{sys.N}")


def flow(sys: SwitchedSystem, sig: Signal) -> np.ndarray:
    """Fundamental matrix; the rightmost factor is the first segment."""
    _check(sys, sig)
    phi, logscale = _kernels.propagate_flow(sys.modes, sig.states,
                                            sig.durations)
    return phi * np.exp(logscale)


def log_flow_norm(sys: SwitchedSystem, sig: Signal) -> float:
    """``log |Phi|_2`` computed without intermediate overflow."""
    _check(sys, sig)
    phi, logscale = _kernels.propagate_flow(sys.modes, sig.states,
                                            sig.durations)
    s = np.linalg.norm(phi, 2)
    if s == 0.0:
        return -np.inf
    return float(np.log(s) + logscale)


def log_spectral_radius_of_flow(sys: SwitchedSystem, sig: Signal) -> float:
    """``log spr(Phi)`` computed without intermediate overflow."""
    _check(sys, sig)
    phi, logscale = _kernels.propagate_flow(sys.modes, sig.states,
                                            sig.durations)
    r = np.max(np.abs(np.linalg.eigvals(phi)))
    if r == 0.0:
        return -np.inf
    return float(np.log(r) + logscale)


def growth_envelope_check(sys: SwitchedSystem, sig: Signal, t: float,
                          s: float, slack: float = 1e-8) -> bool:
    """Check ``e^{-Kt}|Phi(s)| <= |Phi(t+s)| <= e^{Kt}|Phi(s)|``."""
    if t < 0 or s < 0:
        raise InvalidInput("times must be nonnegative")
    total = sig.total_time
    if s + t > total * (1 + 1e-12):
        raise InvalidInput(f"s + t = {s + t} exceeds the signal span {total}")
    a = log_flow_norm(sys, sig.truncated(s))
    b = log_flow_norm(sys, sig.truncated(min(s + t, total)))
    ls = np.log1p(slack)
    return bool(a - sys.K * t - ls <= b <= a + sys.K * t + ls)
