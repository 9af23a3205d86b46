"""
Exception hierarchy for whisperline.

Two families map onto CLI exit codes: usage/config problems (exit 1) and
data/format problems (exit 2).
"""

from typing import Optional


class WhisperlineError(Exception):
    exit_code = 2


class ConfigError(WhisperlineError):
    """Invalid configuration value, unknown architecture or preset."""

    exit_code = 1


class UsageError(WhisperlineError):
    exit_code = 1


class FormatError(WhisperlineError):
    """Malformed or truncated file (WAV header, feature file, checkpoint)."""


class UnsupportedFormat(WhisperlineError):
    pass


class UnsupportedRate(WhisperlineError):
    pass


class ZeroSignalPower(WhisperlineError):
    pass


class ShapeError(WhisperlineError):
    pass


class TooShort(ShapeError):
    pass


class LabelError(WhisperlineError):
    pass


class NormalizationError(WhisperlineError):
    pass


class DataError(WhisperlineError):
    pass


class ManifestError(WhisperlineError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(WhisperlineError):
    """Non-finite activations caught by the debug guard."""
