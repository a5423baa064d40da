"""Exception hierarchy shared by all modules."""


class PredMetricError(Exception):
    """Base class for every error raised by this package."""


class NumericalError(PredMetricError):
    """A numerical routine could not deliver a trustworthy value."""


class DomainError(NumericalError):
    """A point (or a finite-difference stencil around it) leaves the chart domain."""


class StepError(NumericalError):
    """The finite-difference step underflowed or became non-finite."""


class NonSPDError(NumericalError):
    """A metric is not symmetric positive definite."""


class ChartMismatch(PredMetricError):
    """Two charts of different dimension were combined."""


class IntegrationError(NumericalError):
    """An adaptive quadrature failed to reach its error target."""


class DivergentIntegral(NumericalError):
    """An integral representation does not converge for the given inputs."""


class WindowError(NumericalError):
    """The posterior quadrature window does not capture the required mass."""


class TruncationError(NumericalError):
    """Truncating an infinite sum leaves too much tail mass."""


class NonPositiveRatio(NumericalError):
    """A prior ratio pi/pi_P was not strictly positive."""


class SpecError(PredMetricError):
    """A model or prior specification violates its invariants."""


class RangeError(SpecError):
    """A parameter lies outside its admissible range."""


class ConfigError(PredMetricError):
    """An experiment configuration is malformed."""
