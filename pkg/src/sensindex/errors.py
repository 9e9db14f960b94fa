"""Exception hierarchy.

Each error carries the process exit code the CLI maps it to, so the
table in ``sensindex --help`` and the library stay in one place.
"""


class SensIndexError(Exception):
    exit_code = 1


class ParseError(SensIndexError):
    exit_code = 2


class TiesPresent(SensIndexError):
    exit_code = 3


class NonFinite(SensIndexError):
    exit_code = 2


class DegenerateVariance(SensIndexError):
    exit_code = 4

    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component


class QuadratureNotConverged(SensIndexError):
    exit_code = 5


class UnknownModel(SensIndexError):
    exit_code = 6


class InvalidConditionalCdf(SensIndexError):
    exit_code = 7


class InnerBudgetExceeded(SensIndexError):
    exit_code = 5


class InvalidLevel(SensIndexError):
    exit_code = 2


class BoundViolated(SensIndexError):
    """Raised when a pathwise bound fails; always indicates a coding error."""

    exit_code = 1


class TooFewValues(SensIndexError):
    exit_code = 2


class SuiteFailed(SensIndexError):
    exit_code = 1


class ConfigError(SensIndexError):
    exit_code = 64


EXIT_CODES = {
    0: "success",
    1: "verification suite failed",
    2: "input could not be parsed (CSV/config/level)",
    3: "ties present under tie policy 'error'",
    4: "degenerate (zero) variance",
    5: "quadrature did not converge",
    6: "unknown model name",
    7: "invalid conditional CDF table",
    64: "usage error",
}
