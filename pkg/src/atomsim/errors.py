"""Exception types shared across the package."""


class AtomSimError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(AtomSimError, ValueError):
    """A sampler or model was called with an out-of-domain parameter."""


class NumericError(AtomSimError, ArithmeticError):
    """An iterative numeric routine failed to converge."""


class ConfigError(AtomSimError, ValueError):
    """A configuration document is malformed or violates a constraint."""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(message if field is None else f"{field}: {message}")


class FitError(AtomSimError, RuntimeError):
    """A fitting routine could not produce a usable result."""
