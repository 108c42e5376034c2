"""Shared exception types."""


class SrtError(Exception):
    """Base class for every error raised by this package."""


class InvalidInput(SrtError):
    pass


class ConfigMismatch(SrtError):
    pass


class InvalidToken(SrtError):
    pass


class InvalidSample(SrtError):
    pass


class InvalidConfig(SrtError):
    pass


class InvalidSpec(SrtError):
    pass


class AlreadyWrapped(SrtError):
    pass


class UnknownTag(SrtError):
    pass


class ParseMiss(SrtError):
    """Model output lacked the tag-pair delimiter; carries the raw text."""

    def __init__(self, raw: str):
        super().__init__(f"delimiter not found in output: {raw!r}")
        self.raw = raw


class ParseError(SrtError):
    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class SchemaError(SrtError):
    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class DivergenceError(SrtError):
    def __init__(self, step: int):
        super().__init__(f"training loss became non-finite at step {step}")
        self.step = step


class BatchTooLarge(SrtError):
    pass
