"""Exception hierarchy shared across the package."""


class MfevtError(Exception):
    """Base class for all package errors."""


class ParameterError(MfevtError, ValueError):
    """Invalid model or configuration parameters."""


class ModelInvalidError(MfevtError, ValueError):
    """Model fails a structural requirement (e.g. drift mass does not vanish at 1)."""


class DomainError(MfevtError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class GridExtensionError(MfevtError, ValueError):
    """Requested point lies outside the resolved grid of a distribution function."""


class TailResolutionError(MfevtError, RuntimeError):
    """ODE grid budget exhausted before the distribution tails resolved."""


class NumericOverflowError(MfevtError, ArithmeticError):
    """Non-finite values produced during time stepping."""


class EnumerationBudgetError(MfevtError, ValueError):
    """Exhaustive enumeration would exceed the configured budget."""


class ConfigError(MfevtError, ValueError):
    """Experiment configuration is malformed; message carries the offending key path."""


class FormatError(MfevtError, ValueError):
    """Input file does not match the expected schema."""
