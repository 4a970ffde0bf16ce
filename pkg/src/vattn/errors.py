"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    pass


class DegenerateDataError(ValueError):
    """Raised when data carries no usable spread (e.g. all points identical)."""


class NumericalDomainError(ArithmeticError):
    """A computation produced or received non-finite values."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InvalidStateError(RuntimeError):
    pass
