"""Exception hierarchy shared by all mmevit modules."""


class MmevitError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(MmevitError, ValueError):
    """Array extents do not satisfy an operation's contract."""


class NonFiniteError(MmevitError, FloatingPointError):
    """A kernel produced NaN or Inf."""


class ValidationError(MmevitError, ValueError):
    """Input violates a documented precondition."""


class ParseError(ValidationError):
    """Malformed on-disk input, reported with its location."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        self.message = message
        where = self.path if line is None else f"{self.path}:{line}"
        super().__init__(f"{where}: {message}")
