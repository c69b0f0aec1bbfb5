"""Exception hierarchy.

Every error raised by the library derives from :class:`BlochError` so the
CLI can map failures to exit codes: :class:`InputError` subclasses exit
with 1, :class:`NumericalError` subclasses exit with 2.
"""


class BlochError(Exception):
    """Base class for all library errors."""


class InputError(BlochError):
    """Malformed or inadmissible input."""


class ParseError(InputError):
    pass


class ValidationError(InputError):
    """A ModelSpec invariant is violated; ``field`` names the culprit."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class FluxNotAdmissible(ValidationError):
    def __init__(self, message):
        super().__init__("magnetic.B0", message)


class NotApplicable(InputError):
    pass


class NumericalError(BlochError):
    """A numerical stage failed; ``stage`` names it for diagnostics."""

    stage = "numerics"


class EigensolverFailure(NumericalError):
    stage = "eigensolve"


class AssumptionAViolated(NumericalError):
    stage = "gap_audit"


class AssumptionBViolated(NumericalError):
    stage = "gauge"


class GapTooSmall(NumericalError):
    stage = "gap"


class NonOrthogonalRHS(NumericalError):
    stage = "fredholm"


class SingularSolve(NumericalError):
    stage = "fredholm"


class RouteMismatch(NumericalError):
    stage = "h1_routes"


class GridResolutionError(NumericalError):
    stage = "grid"


ResolutionError = GridResolutionError


class StepFailure(NumericalError):
    stage = "ode"


class CausticReached(NumericalError):
    stage = "wkb"


class CFLViolation(NumericalError):
    stage = "direct"


class SolverDivergence(NumericalError):
    stage = "direct"


class AliasWarning(UserWarning):
    """Symbol quadrature is under-resolved on the requested frequency set."""
