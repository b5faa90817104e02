"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Input array or argument violates a documented precondition."""


class InvalidSpecError(ValueError):
    """A quantizer specification is malformed or incompatible with its input."""


class EmptyAccumulatorError(ValueError):
    """A Procrustes solve was requested before any sample was accumulated."""


class NumericalError(ArithmeticError):
    """An iterative numerical routine failed to converge."""


class PreconditionError(RuntimeError):
    """An object is in the wrong state for the requested operation."""


class ConfigError(ValueError):
    """A run configuration file is invalid."""
