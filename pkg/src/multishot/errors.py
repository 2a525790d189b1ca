"""Exception hierarchy shared across the package.

The CLI maps these onto stable exit codes (see ``cli.EXIT_CODES``).
"""


class MultishotError(Exception):
    """Base class for all package errors."""


class ValidationError(MultishotError, ValueError):
    """A request or artifact violates a documented precondition."""


class ShapeError(ValidationError):
    """Array shapes are inconsistent or not divisible as required."""


class ConfigError(ValidationError):
    """A configuration value is outside its legal range."""


class RangeError(ValidationError, IndexError):
    """An index or timestep lies outside its valid interval."""


class NumericalError(MultishotError, ArithmeticError):
    """A computation produced non-finite values."""


class EmptyAttentionRowError(NumericalError):
    """A softmax row has no admissible entry."""


class EstimationFailed(MultishotError):
    """A robust estimator could not find enough support."""


class MissingInputError(MultishotError, FileNotFoundError):
    """An upstream artifact required by a command does not exist."""
