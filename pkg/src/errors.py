"""
Exception hierarchy for the TGVFM desk pipeline.

Every error raised on purpose by this package derives from TGVFMError so the
CLI can report it with context and exit non-zero.
"""


class TGVFMError(Exception):
    """Base class for all domain errors."""


class ConfigurationError(TGVFMError, ValueError):
    """Raised when a configuration value or combination is invalid."""


class ContractError(TGVFMError, ValueError):
    """Raised when an operation is called outside its contract (shapes, ranges, state)."""


class EventRangeError(ContractError):
    """Raised when an event falls outside the window being encoded."""


class CheckpointFormatError(TGVFMError, ValueError):
    """Raised when a binary container has the wrong magic or version."""


class DataNotFoundError(TGVFMError, FileNotFoundError):
    """Raised when a dataset or checkpoint is missing; carries a remediation hint."""

    def __init__(self, path, hint: str):
        self.path = str(path)
        self.hint = hint
        super().__init__(f"{self.path} not found. {hint}")
