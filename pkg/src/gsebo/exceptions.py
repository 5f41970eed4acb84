class ContractError(ValueError):
    """Raised when an operation's documented precondition is violated."""


class DivergenceError(FloatingPointError):
    """Raised when the inner optimization produces a non-finite loss."""


class BundleFormatError(ValueError):
    """Raised by the bundle loader, carrying the offending file and line."""

    def __init__(self, path, message, line=None):
        self.path = str(path)
        self.line = line
        where = self.path if line is None else f"{self.path}:{line}"
        super().__init__(f"{where}: {message}")
