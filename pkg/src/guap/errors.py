"""Exception types shared across the package."""


class GuapError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(GuapError):
    """A data file could not be parsed; message carries the line number."""


class ValidationError(GuapError):
    """Inputs violate a documented precondition or invariant."""


class FormatError(GuapError):
    """Persisted file has an unknown or unsupported format version."""


class ConfigError(GuapError):
    """Invalid hyperparameter or run configuration."""


class DegenerateGradientError(GuapError):
    """Every candidate class has a zero boundary gradient; target cannot be
    perturbed this round."""
