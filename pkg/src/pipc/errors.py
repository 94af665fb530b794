"""Exception types shared across the package."""


class PipcError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PipcError):
    """Invalid or inconsistent configuration (bad scenario file, goal == start, ...)."""


class NumericalError(PipcError):
    """Numerical failure: singular weights, indefinite systems, divergent estimates."""


class SdfQueryError(PipcError):
    """A signed-distance-field query fell outside the field extent."""
