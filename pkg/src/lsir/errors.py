"""Exception types shared across the package."""


class DataError(ValueError):
    """Input data violates a structural requirement."""


class NumericalError(RuntimeError):
    """A numerical routine failed (singular system, divergence, NaN objective)."""
