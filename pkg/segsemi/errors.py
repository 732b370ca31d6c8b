"""
Error types for segsemi

Every error carries a human-readable message plus a ``detail`` dict that the
logging layer emits as structured fields, and the exit code the CLI returns.
"""

from typing import Any, Dict


class SegSemiError(Exception):
    """Base error with structured detail"""

    exit_code: int = 1

    def __init__(self, message: str, **detail: Any):
        super().__init__(message)
        self.message = message
        self.detail: Dict[str, Any] = detail

    def __str__(self) -> str:
        if not self.detail:
            return self.message
        fields = ", ".join(f"{k}={v!r}" for k, v in self.detail.items())
        return f"{self.message} ({fields})"


# Tensor engine
class ShapeError(SegSemiError):
    """Operand shapes incompatible with an op"""


class NonScalarLossError(SegSemiError):
    """backward() called on a tensor with more than one element"""


class NonFiniteGradientError(SegSemiError):
    """NaN or Inf reached the optimizer"""


# Losses and decoding
class LabelRangeError(SegSemiError):
    """Class id outside [0, C)"""


class TranscriptTooLongError(SegSemiError):
    """Teacher-forcing target exceeds the decoder's maximum length"""


class EmptyBeamError(SegSemiError):
    """Every action was masked before beam expansion"""


# Matching
class NoValidAlignment(SegSemiError):
    """Transcript has more steps than the video has frames"""


class NoFeasibleCandidate(SegSemiError):
    """No candidate transcript can be aligned to the video"""


# Data
class DurationFitError(SegSemiError):
    """Synthetic segment durations could not be fitted into the frame range"""


class SplitError(SegSemiError):
    """Annotated/unannotated split is impossible"""


class ParseError(SegSemiError):
    """Malformed binary or JSON file"""

    exit_code = 2


class ManifestError(SegSemiError):
    """Dataset index does not validate"""

    exit_code = 2


class DatasetError(SegSemiError):
    """Dataset unusable for the requested command"""

    exit_code = 2


class VocabularyMismatchError(SegSemiError):
    """Checkpoint and dataset disagree on the action vocabulary"""

    exit_code = 2


class ConfigError(SegSemiError):
    """Invalid settings or hyperparameters"""

    exit_code = 2


class CheckpointError(SegSemiError):
    """Unreadable or incompatible checkpoint"""

    exit_code = 2
