"""Exception hierarchy shared by all modules."""


class NplcmError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(NplcmError, ValueError):
    """Array shapes or lengths are inconsistent."""


class CapabilityError(NplcmError, ValueError):
    """The request exceeds what the implementation supports (e.g. pattern enumeration at large J)."""


class NumericError(NplcmError, ArithmeticError):
    """A numerical routine failed to converge or produced an invalid value."""

    def __init__(self, message, **context):
        super().__init__(message)
        self.context = context

    def __str__(self):
        base = super().__str__()
        if not self.context:
            return base
        extra = ", ".join(f"{k}={v}" for k, v in self.context.items())
        return f"{base} ({extra})"


class InfiniteLogOddsRatio(NplcmError, ArithmeticError):
    """A 2x2 cell probability is zero, so the log odds ratio is +/- infinity."""

    def __init__(self, sign):
        super().__init__(f"degenerate cell probability; log odds ratio is {'+' if sign > 0 else '-'}inf")
        self.sign = sign


class UndefinedVarianceError(NplcmError, ValueError):
    """A statistic needs nonzero variance but the input series is constant."""


class PatternNotFound(NplcmError, KeyError):
    """A measurement pattern is not present among the cases."""
