"""Exception hierarchy shared by every module.

Each class carries an ``exit_code`` used by the command-line front end so
that tool failures map to stable, distinct process exit statuses (>= 10).
"""


class VoiceFPError(Exception):
    exit_code = 10


class AudioFormatError(VoiceFPError):
    """Malformed or truncated RIFF/WAVE data."""

    exit_code = 11


class UnsupportedChannelsError(AudioFormatError):
    exit_code = 11


class UnsupportedCodecError(AudioFormatError):
    exit_code = 11


class UnsupportedRateError(VoiceFPError):
    exit_code = 12


class PreconditionError(VoiceFPError):
    """An input violates a documented invariant (range, norm, shape)."""

    exit_code = 12


class ConfigurationError(VoiceFPError):
    exit_code = 12


class DimensionError(ConfigurationError):
    exit_code = 12


class InsufficientAudioError(VoiceFPError):
    exit_code = 13


class InsufficientIdentitiesError(VoiceFPError):
    exit_code = 13


class InsufficientClassesError(VoiceFPError):
    exit_code = 13


class DegenerateEmbeddingError(VoiceFPError):
    """Zero vector where a direction is required (normalization impossible)."""

    exit_code = 14


class SingularGradientError(DegenerateEmbeddingError):
    exit_code = 14


class TrainingDivergenceError(VoiceFPError):
    exit_code = 15


class EnrollmentEmptyError(VoiceFPError):
    exit_code = 16


class PolicyViolationError(VoiceFPError):
    exit_code = 16


class VersionError(VoiceFPError):
    """Schema or head-version mismatch between artifacts."""

    exit_code = 17


class CorruptProfileError(VoiceFPError):
    exit_code = 17


class DegenerateTrialsError(VoiceFPError):
    """A trial set lacks positives or negatives."""

    exit_code = 18


class MissingProfileError(VoiceFPError):
    exit_code = 19


class MissingArtifactError(VoiceFPError):
    exit_code = 20
