"""Exception types shared by the helpers and the CLI."""


class WorkbenchError(Exception):
    """Base class for errors caused by bad input or bad usage (CLI exit code 1)."""


class InvalidArgument(WorkbenchError, ValueError):
    pass


class InvalidState(WorkbenchError, RuntimeError):
    pass


class ConfigError(WorkbenchError):
    pass


class NonFiniteError(WorkbenchError):
    """A gradient check hit a NaN or infinity."""

    def __init__(self, name, index, value):
        self.name = name
        self.index = index
        self.value = value
        super().__init__(f"non-finite value {value!r} at {name}{list(index)}")


class ParseError(WorkbenchError):
    """Malformed artifact file; reports the 1-based line number."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        self.message = message
        super().__init__(f"{self.path}:{line}: {message}")
