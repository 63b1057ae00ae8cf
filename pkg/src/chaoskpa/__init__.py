"""Known-plaintext attack workbench for chaotic image ciphers."""

__version__ = "0.1.0"


class KPAError(Exception):
    """Base class for all package errors."""


class ParameterError(KPAError, ValueError):
    """Key material or hyperparameter outside its valid domain."""


class UsageError(KPAError, ValueError):
    """Inputs that do not fit together (scheme vs channels, empty splits, ...)."""


class FormatError(KPAError, ValueError):
    """Malformed dataset, archive or checkpoint file."""


class ShapeError(KPAError, ValueError):
    """Tensor shapes that an op cannot accept."""


class StateError(KPAError, RuntimeError):
    """An operation was called in the wrong order (e.g. backward before forward)."""


class NumericalError(KPAError, ArithmeticError):
    """Non-finite values encountered during training."""
