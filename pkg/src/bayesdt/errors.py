"""Shared exception types."""


class DatasetError(ValueError):
    """Raised for unusable input data (parse failures, bad shapes, degenerate labels)."""


class MemoCapExceeded(RuntimeError):
    """Raised when the score table would exceed the configured entry cap."""


class MemoFormatError(ValueError):
    """Raised when a score-table dump file is malformed or truncated."""


class TreeParseError(ValueError):
    """Raised for malformed tree text; carries the offending position."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class EnumerationCapExceeded(RuntimeError):
    """Raised when brute-force tree enumeration would exceed its cap."""
