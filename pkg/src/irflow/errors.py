"""Exception and warning types raised by irflow."""


class IRFlowError(Exception):
    """Base class for every error raised by the library."""


class InvalidParams(IRFlowError, ValueError):
    pass


class ZeroMomentum(IRFlowError, ValueError):
    pass


class DimOverflow(IRFlowError):
    pass


class WindowOutOfRange(IRFlowError, ValueError):
    pass


class HermiticityError(IRFlowError):
    pass


class NoConvergence(IRFlowError):
    pass


class DegenerateGround(IRFlowError):
    """The two lowest Ritz values coincide within the resolution tolerance."""


class SingularShift(IRFlowError):
    """A shifted system (H - z) x = b is singular to working precision."""


class EnclosureViolation(IRFlowError):
    pass


class ContractionFailure(IRFlowError):
    """The resolvent sandwich of the scale update has norm >= 1."""

    def __init__(self, message, factor=None):
        super().__init__(message)
        self.factor = factor


class GradientTooLarge(IRFlowError, ValueError):
    pass


class ConsistencyFailure(IRFlowError):
    pass


class GapCollapse(IRFlowError):
    pass


class TruncationWarning(UserWarning):
    """Weight at the occupation cutoff exceeds the configured fraction."""


class ConfigError(IRFlowError):
    pass


class ParseError(ConfigError):
    def __init__(self, line, key, message=""):
        self.line = line
        self.key = key
        super().__init__(f"line {line}: cannot parse {key!r} {message}".rstrip())


class SchemaViolation(ConfigError):
    def __init__(self, key, message="unknown key"):
        self.key = key
        super().__init__(f"{key}: {message}")


class InvariantViolation(ConfigError):
    pass
