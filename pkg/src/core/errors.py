"""Error hierarchy shared by the core modules and the CLI.

Every error carries the process exit code the CLI uses when it surfaces.
"""


class MetrError(Exception):
    exit_code = 4


class InvalidArgumentError(MetrError, ValueError):
    exit_code = 2


class ConfigError(MetrError):
    exit_code = 2

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class TensorFormatError(MetrError):
    exit_code = 3

    def __init__(self, message: str, offset: int, path: str | None = None):
        self.offset = offset
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{message} (byte offset {offset})")


class PairingError(MetrError):
    exit_code = 3


class DegenerateInputError(MetrError, ValueError):
    exit_code = 4


class CriterionUndefinedError(MetrError, ValueError):
    exit_code = 2


class InvariantViolation(MetrError):
    exit_code = 4
