"""Exception hierarchy.

Every error carries a short machine name (``kind``) which the CLI prints
alongside the message.
"""


class SwitchLyapError(Exception):
    kind = "error"


class InvalidInput(SwitchLyapError, ValueError):
    kind = "invalid-input"


class InvalidSignal(InvalidInput):
    kind = "invalid-signal"


class IllConditionedSplit(SwitchLyapError, ArithmeticError):
    kind = "ill-conditioned-split"


class DegenerateSplit(SwitchLyapError, ValueError):
    kind = "degenerate-split"


class NonErgodicInput(SwitchLyapError, ValueError):
    kind = "non-ergodic-input"


class ScaleResolutionFailure(SwitchLyapError, ArithmeticError):
    kind = "scale-resolution-failure"


class NotAFastFamily(SwitchLyapError, ValueError):
    kind = "not-a-fast-family"


class InternalError(SwitchLyapError, RuntimeError):
    kind = "internal-error"
