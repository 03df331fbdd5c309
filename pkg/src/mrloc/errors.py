"""Exception types. Each maps to a CLI exit code."""


class ConfigError(ValueError):
    """Invalid parameter or configuration (exit code 2)."""

    exit_code = 2


class DataError(ValueError):
    """Input data is malformed or degenerate (exit code 3)."""

    exit_code = 3


class FormatError(DataError):
    """A binary file does not conform to its format."""

    def __init__(self, message, offset=None, path=None):
        self.offset = offset
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class PreconditionError(DataError):
    """Marker image exceeds the mask image."""


class NumericalError(ArithmeticError):
    """A numerical routine failed to converge (exit code 4)."""

    exit_code = 4
