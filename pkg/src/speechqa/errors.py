"""Exception hierarchy shared by all speechqa modules."""


class SpeechQaError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SpeechQaError):
    """Invalid configuration: missing columns, empty family sets, bad ranges."""


class DataError(SpeechQaError):
    """Malformed or out-of-contract data values (scores, splits, duplicate ids)."""


class FormatError(SpeechQaError):
    """Unsupported or corrupt file encodings (WAV, cache, checkpoint)."""


class AlignmentError(SpeechQaError):
    """Degenerate cross-correlation input or insufficient overlap."""


class FeatureError(SpeechQaError):
    """Audio too short or at the wrong rate for feature extraction."""


class ShapeError(SpeechQaError):
    """Tensor dimension mismatch against a module configuration."""


class CapacityError(SpeechQaError):
    """Assembled sequence exceeds the decoder's maximum length."""


class TrainingError(SpeechQaError):
    """Non-finite loss, empty answer span, or inconsistent batch."""


class TemplateError(SpeechQaError):
    """Unresolvable or undeclared placeholder in a QA template."""


class ParseError(SpeechQaError):
    """Unknown category word in rule-based score mapping."""
