"""Exception types raised across the package."""


class YamabeAtlasError(Exception):
    """Base class for all package errors."""


class InvalidParameter(YamabeAtlasError, ValueError):
    pass


class OutOfOverlap(YamabeAtlasError, ValueError):
    pass


class DegenerateCover(YamabeAtlasError):
    pass


class SingularMetric(YamabeAtlasError):
    pass


class UnsupportedRank(YamabeAtlasError, ValueError):
    pass


class InvalidExponent(YamabeAtlasError, ValueError):
    pass


class PositivityViolation(YamabeAtlasError, ValueError):
    """A field dropped to or below its positivity floor.

    Carries the offending chart, grid index and value.
    """

    def __init__(self, message, chart=None, index=None, value=None):
        super().__init__(message)
        self.chart = chart
        self.index = index
        self.value = value


class RadiusViolation(YamabeAtlasError, ValueError):
    pass


class ParameterOutOfRange(YamabeAtlasError, ValueError):
    pass


class NonConvergence(YamabeAtlasError):
    pass


class AnchorTooCloseToBoundary(YamabeAtlasError, ValueError):
    pass


class IntervalViolation(YamabeAtlasError, ValueError):
    pass


class TraceCoverage(YamabeAtlasError, ValueError):
    pass


class StepFailure(YamabeAtlasError):
    """Raised when the stepper exhausts its dt halvings.

    ``trace`` holds the partial diagnostics recorded up to the failure and
    ``state`` the last accepted state.
    """

    def __init__(self, message, trace=None, state=None):
        super().__init__(message)
        self.trace = trace
        self.state = state


class ConfigParseError(YamabeAtlasError, ValueError):
    def __init__(self, message, line=None, key=None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if key is not None:
            loc.append(f"key {key!r}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.line = line
        self.key = key


class ConfigValidationError(YamabeAtlasError, ValueError):
    pass
