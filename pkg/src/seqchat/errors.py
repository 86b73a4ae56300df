"""Exception types shared across the package."""


class ShapeMismatch(ValueError):
    """Operands have incompatible shapes."""


class IndexOutOfVocab(ValueError):
    """A token id falls outside the vocabulary / embedding table."""


class TapeReplayError(RuntimeError):
    """The requested output was not produced by this tape."""


class MalformedConversationList(ValueError):
    """A conversation entry cannot be parsed or references a missing line id."""


class InvalidRange(ValueError):
    """min/max bounds are inconsistent."""


class EmptyDataset(ValueError):
    """No pairs available to batch or train on."""


class Diverged(RuntimeError):
    """Training loss became non-finite."""


class CorruptCheckpoint(ValueError):
    """Checkpoint file has a bad magic, unsupported version, or is truncated."""


class VocabMismatch(ValueError):
    """Checkpoint vocabulary does not match the dataset vocabulary."""


class ModelNotLoaded(RuntimeError):
    """The service has no usable model."""


class BadRequest(ValueError):
    """Client request rejected (empty or oversize text, bad payload)."""


class BindError(OSError):
    """The service could not bind its address."""
