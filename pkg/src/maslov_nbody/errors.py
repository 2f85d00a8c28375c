"""Exception hierarchy shared by all pipelines.

The CLI maps these onto exit codes: InputError -> 1, PreconditionError
and its subclasses -> 2, ConvergenceFailure and its subclasses -> 3.
"""


class MaslovNBodyError(Exception):
    """Base class for every error raised by this package."""


class InputError(MaslovNBodyError):
    """Malformed problem file or argument."""


class PreconditionError(MaslovNBodyError):
    """A documented precondition of an operation does not hold."""


class SingularConfigurationError(PreconditionError):
    """Two bodies closer than the collision tolerance."""


class DegenerateConfigurationError(PreconditionError):
    """The zero configuration was passed where a normalizable one is required."""


class ChartDomainError(PreconditionError):
    """Chart coordinates outside the validity radius; recenter the chart."""


class InvalidStateError(PreconditionError):
    """Blow-up state with nonpositive radius or wrong shape."""


class ContractViolation(PreconditionError):
    """An input failed a structural check (symplecticity, symmetry...)."""


class SpiralError(PreconditionError):
    """The operation needs a non-spiral end but got a spiral one."""


class NonSpiralError(PreconditionError):
    """The operation needs a spiral end but got a non-spiral one."""


class ConvergenceFailure(MaslovNBodyError):
    """An iterative method failed to reach its tolerance."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class SearchFailure(ConvergenceFailure):
    """Central configuration search did not converge."""


class DivergenceError(ConvergenceFailure):
    """Blow-up variables exceeded the divergence threshold."""


class NonRegularCrossing(ConvergenceFailure):
    """A crossing stayed degenerate after the allowed endpoint perturbations."""

    def __init__(self, message, crossings=None):
        super().__init__(message)
        self.crossings = crossings or []


class InvariantViolation(MaslovNBodyError):
    """An internal consistency check failed; this indicates a bug or bad data."""
