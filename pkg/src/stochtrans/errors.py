"""Exception hierarchy shared by all modules.

Every error carries a machine-readable ``kind`` string so the CLI can emit
it in JSON reports and map it to an exit code (validation -> 2, any numeric
failure -> 3).
"""


class StochTransError(Exception):
    """Base class for all package errors."""

    kind = "error"


class ValidationError(StochTransError):
    """Bad arguments or configuration, detected before any computation."""

    kind = "validation"


class NumericError(StochTransError):
    """A computation could not be completed to the required accuracy."""

    kind = "numeric"


class DivergenceError(NumericError):
    """A trajectory escaped the configured bounding box."""

    kind = "divergence"

    def __init__(self, message, escape_time=None):
        super().__init__(message)
        self.escape_time = escape_time


class SaturationError(NumericError):
    """A closed-form evaluation overflowed the representable range."""

    kind = "saturation"


class SingularInputError(NumericError):
    """Input lies on a singular set where the requested quantity is undefined."""

    kind = "singular"


class ResolutionError(NumericError):
    """A length scale fell below what the discretization can resolve."""

    kind = "resolution"


class BudgetError(NumericError):
    """Requested work exceeds the configured sample/point budget."""

    kind = "budget"


class SolverError(NumericError):
    """A linear or nonlinear solver failed to converge."""

    kind = "solver"


class TruncationError(NumericError):
    """A query left the truncated computational domain."""

    kind = "truncation"


class InversionError(NumericError):
    """Newton inversion of a mapping failed to converge."""

    kind = "inversion"


class QuadratureError(NumericError):
    """Adaptive quadrature failed to converge at the requested tolerance."""

    kind = "quadrature"
