"""Exception types shared across the package."""


class ChpDispatchError(Exception):
    """Base class for all package-specific errors."""


class InvalidSpec(ChpDispatchError):
    """A unit, storage or instance definition violates its own declared limits."""


class HorizonMismatch(ChpDispatchError):
    """Series lengths disagree with the declared horizon."""


class DimensionMismatch(ChpDispatchError):
    """Matrix blocks or scenario arrays have inconsistent shapes."""


class InfeasibleData(ChpDispatchError):
    """Instance data makes every schedule infeasible (e.g. demand above total capacity)."""


class InfeasibleRobust(ChpDispatchError):
    """The robust counterpart admits no feasible policy for the requested protection level."""


class NotPSD(ChpDispatchError):
    """A covariance matrix is not positive semidefinite."""


class UnsupportedSet(ChpDispatchError):
    """The requested uncertainty-set operation is not available for these parameters."""


class DimensionTooLarge(UnsupportedSet):
    """Vertex enumeration refused: the coordinate count exceeds the guard."""


class NegativeSigma(InvalidSpec):
    """A standard deviation parameter is negative."""


class TargetTooLarge(ChpDispatchError):
    """Scenario reduction asked for more scenarios than the set contains."""


class NotSolved(ChpDispatchError):
    """Policy extraction requested from a model that has no usable solution."""


class InfeasibleFirstStage(ChpDispatchError):
    """A schedule handed to the evaluation model violates its static constraints."""


class BackendUnavailable(ChpDispatchError):
    """The requested solver backend cannot be imported or used."""


class SolverError(ChpDispatchError):
    """The solver backend failed in a way that is not an ordinary infeasible/unbounded status."""


class ParseError(ChpDispatchError):
    """A data file is malformed; carries the offending line number when known."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class GapError(ChpDispatchError):
    """A time series has missing or non-hourly timestamps."""


class ConfigError(ChpDispatchError):
    """A run configuration document is missing keys or holds invalid values."""


class NoPeaker(ChpDispatchError):
    """Load rescaling needs a heat-only peaker in the portfolio and none is present."""


class Unachievable(ChpDispatchError):
    """No scale factor in the allowed range attains the requested peak-unit share."""
