"""Exception types shared across the package."""


class AdasketchError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(AdasketchError):
    pass


class NotPositiveDefinite(AdasketchError):
    pass


class NotPowerOfTwo(AdasketchError):
    pass


class ConvergenceFailure(AdasketchError):
    pass


class InvalidDecay(AdasketchError):
    pass


class MalformedCsv(AdasketchError):
    pass


class NonNumericField(AdasketchError):
    pass


class SketchTooLarge(AdasketchError):
    pass


class InvalidSparsity(AdasketchError):
    pass


class InvalidProbability(AdasketchError):
    pass


class NegativeValue(AdasketchError):
    pass


class BreakdownDetected(AdasketchError):
    pass


class FlagConflict(AdasketchError):
    pass


class IoFormatError(AdasketchError):
    pass
