"""
Error types shared by the engines and the command line.

Each error carries the process exit code the CLI should use when it escapes a
command.
"""

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4
EXIT_CAPACITY = 5


class TensorRingError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class InputError(TensorRingError, ValueError):
    """Invalid arguments, indices or hyperparameters."""

    exit_code = EXIT_USAGE


class ModeError(InputError):
    """An operation was called for the wrong data kind (continuous vs binary)."""


class ParseError(InputError):
    """A sparse tensor or index file is malformed."""

    exit_code = EXIT_IO

    def __init__(self, message: str, path=None, line: int = None):
        self.path = str(path) if path is not None else None
        self.line = line
        location = ''
        if self.path:
            location = self.path
        if line is not None:
            location = f"{location}:{line}" if location else f"line {line}"
        super().__init__(f"{location}: {message}" if location else message)


class CapacityError(TensorRingError):
    """A dense materialisation would exceed the configured size guard."""

    exit_code = EXIT_CAPACITY


class NumericalError(TensorRingError, ArithmeticError):
    """Non-finite values appeared during fitting."""

    exit_code = EXIT_NUMERICAL

    def __init__(self, message: str, diagnostics: dict = None):
        self.diagnostics = dict(diagnostics or {})
        if self.diagnostics:
            details = ', '.join(f"{k}={v}" for k, v in self.diagnostics.items())
            message = f"{message} ({details})"
        super().__init__(message)
