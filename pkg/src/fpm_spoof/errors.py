"""Exception hierarchy shared by all fpm_spoof modules.

Every error raised on purpose by this package derives from SpoofKitError so
callers (and the CLI) can tell contract violations apart from genuine bugs.
"""


class SpoofKitError(Exception):
    """Base class for all errors raised by fpm_spoof."""


class ValidationError(SpoofKitError):
    """A value violates a documented invariant (bad enum token, duplicate path, ...)."""


class ManifestParseError(ValidationError):
    """A manifest line could not be parsed; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class InsufficientDataError(SpoofKitError):
    """Not enough entries to satisfy a sampling or training precondition."""


class ShapeError(SpoofKitError):
    """Array shape incompatible with the operation's contract."""


class RoleError(SpoofKitError):
    """Model role (teacher/student) does not match the requested operation."""


class ConfigError(SpoofKitError):
    """Invalid or mutually inconsistent configuration."""


class LabelSpaceError(ValidationError):
    """Dev/eval labels not covered by the training label space."""


class OneClassViolationError(ValidationError):
    """A fake-labeled entry reached a consumer restricted to real speech."""


class CalibrationMismatchError(SpoofKitError):
    """Calibration statistics were computed for different models or frontend."""


class CheckpointError(SpoofKitError):
    """Checkpoint file missing, malformed, or incompatible."""


class AudioDecodeError(SpoofKitError):
    """Audio file could not be read or decoded."""


class EmptyAudioError(AudioDecodeError):
    """Audio file decoded to zero samples."""


class EvaluationError(SpoofKitError):
    """Metric undefined for the given inputs (e.g. single-class score set)."""
