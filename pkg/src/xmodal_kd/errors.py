"""Exception hierarchy. The CLI maps these onto exit codes."""


class XmodalError(Exception):
    pass


class ConfigError(XmodalError, ValueError):
    """Invalid configuration or precondition (exit code 1)."""


class ShapeError(XmodalError, ValueError):
    """Array shapes or lengths disagree."""


class DomainError(XmodalError, ValueError):
    """Argument outside the mathematical domain (e.g. non-positive temperature)."""


class NumericError(XmodalError, ArithmeticError):
    """Non-finite values appeared during training (exit code 3)."""
