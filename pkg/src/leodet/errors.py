"""Error types shared across the package.

Every error carries a stable machine-readable ``code`` so the CLI can emit
structured error JSON on stderr and bindings can surface the same code.
"""


class LeodError(Exception):
    """Base class for all package errors."""

    code = "error"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message

    def to_json(self) -> dict:
        return {"error": self.code, "message": self.message}


class InvalidInputError(LeodError):
    code = "invalid-input"


class InvalidConfigError(LeodError):
    code = "invalid-config"


class InvalidThresholdsError(LeodError):
    code = "invalid-thresholds"


class UndefinedMetricError(LeodError):
    code = "undefined-metric"


class EmptyResultError(LeodError):
    code = "empty-result"


class FormatError(LeodError):
    code = "invalid-format"
