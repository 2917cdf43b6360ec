"""Exception hierarchy. The CLI maps ConfigError to exit code 1 and
NumericalError to exit code 2."""


class TicError(Exception):
    pass


class ConfigError(TicError, ValueError):
    """Invalid configuration or argument; ``path`` names the offending field."""

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class DomainError(ConfigError):
    """Evaluation point outside the horizon."""


class ContractError(TicError, ValueError):
    pass


class NumericalError(TicError, ArithmeticError):
    pass


class DegenerateFOCError(NumericalError):
    """The stationarity condition has no interior solution (zero curvature)."""
