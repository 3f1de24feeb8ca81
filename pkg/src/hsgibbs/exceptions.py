"""Exception types raised across the package."""


class InvalidDimensionError(ValueError):
    """A grid size or vector length violates an operator's preconditions."""


class InvalidParameterError(ValueError):
    """A model parameter is outside its admissible range."""


class FactorizationError(RuntimeError):
    """A matrix factorization or triangular solve failed.

    Raised when a matrix that must be symmetric positive definite is not
    (numerically), which makes the current Gibbs state unusable.
    """


class ConfigError(ValueError):
    """An experiment configuration could not be parsed or validated."""
