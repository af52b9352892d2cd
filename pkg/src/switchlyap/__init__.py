"""Deterministic and probabilistic Lyapunov exponents of switched linear systems."""
from .ctmc import MarkovParams, RateMatrix
from .errors import (DegenerateSplit, IllConditionedSplit, InternalError,
                     InvalidInput, InvalidSignal, NonErgodicInput,
                     NotAFastFamily, ScaleResolutionFailure, SwitchLyapError)
from .flows import Signal, SwitchedSystem

__version__ = "0.1.0"

__all__ = [
    "MarkovParams", "RateMatrix", "Signal", "SwitchedSystem",
    "SwitchLyapError", "InvalidInput", "InvalidSignal", "IllConditionedSplit",
    "DegenerateSplit", "NonErgodicInput", "ScaleResolutionFailure",
    "NotAFastFamily", "InternalError",
]
