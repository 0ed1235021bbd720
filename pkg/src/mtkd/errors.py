"""Exception types raised across the package.

Every error is a subclass of :class:`MtkdError` so callers can catch the
whole family with one except clause.
"""


class MtkdError(Exception):
    """Base class for all package errors."""


# -- corpus ------------------------------------------------------------

class MissingField(MtkdError):
    """A dataset record lacks one of the required id/text/label fields."""


class UnknownLabel(MtkdError):
    """A record's label is not in the declared class set."""


class EmptyDataset(MtkdError):
    """A dataset file contained zero records."""


class InfeasibleStratification(MtkdError):
    """A class has fewer samples than the requested number of folds."""


# -- emotion graph -----------------------------------------------------

class EmptyVocabulary(MtkdError):
    """Tokenization produced no tokens for the whole corpus."""


# -- encoder / TTS backends --------------------------------------------

class BackendFailure(MtkdError):
    """An encoder or TTS backend is unavailable or failed to run."""


# -- training ----------------------------------------------------------

class NonFiniteLoss(MtkdError):
    """Training loss became NaN or infinite."""


class IncompatibleHead(MtkdError):
    """Head attention-head count does not divide the encoder width."""


class RangeError(MtkdError):
    """A hyperparameter falls outside the declared search space."""


# -- audio pipeline ----------------------------------------------------

class EmptyText(MtkdError):
    """Text to be chunked for synthesis is empty."""


class ClipTooLong(MtkdError):
    """A TTS backend returned a clip longer than its declared cap."""


class InvalidPatchGrid(MtkdError):
    """Patch size/overlap cannot produce a valid sliding-window grid."""


# -- distillation ------------------------------------------------------

class ClassMismatch(MtkdError):
    """Teacher probability vectors have unequal lengths."""


class MissingTeacherOutput(MtkdError):
    """No cached teacher output for a post that needs one."""


class MissingModality(MtkdError):
    """A fusion mode requires a modality vector that was not supplied."""


# -- evaluation --------------------------------------------------------

class LengthMismatch(MtkdError):
    """y_true and y_pred have different lengths."""


class InsufficientSamples(MtkdError):
    """Too few samples in a duration bin + class group for PCA."""


# -- experiment harness ------------------------------------------------

class StageError(MtkdError):
    """A pipeline stage failed; carries the stage name for diagnosis."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
