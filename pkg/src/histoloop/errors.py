"""Exception types shared across the histoloop pipeline."""


class HistoloopError(Exception):
    """Base class for all histoloop errors."""


class IngestionError(HistoloopError):
    """Slide source could not be read (file missing, corrupt, too many bad tiles)."""


class UnsupportedScaleError(HistoloopError):
    """Requested working resolution is finer than the stored level (upscaling)."""


class EmptyGridError(HistoloopError):
    """Slide too small to hold a single full tile at the working resolution."""


class EmptyPoolError(HistoloopError):
    """An operation that needs at least one patch/embedding got none."""


class ConfigurationError(HistoloopError):
    """Backend or pipeline configuration is invalid or incomplete."""


class BackendFaultError(HistoloopError):
    """A pluggable backend produced unusable output (e.g. non-finite values)."""


class SequencingError(HistoloopError):
    """Operation issued out of order for the session/round state machine."""


class ImmutableError(HistoloopError):
    """Mutation attempted on a finalized session or a closed round."""


class MergeConflictError(HistoloopError):
    """Duplicate slide annotations with identical provenance timestamps."""


class CannotSplitError(HistoloopError):
    """Dataset has too few slides for a slide-level split."""


class DataLeakError(HistoloopError):
    """Training and validation sets share slides."""


class MappingIncompleteError(HistoloopError):
    """External label encountered that the class mapping does not cover."""
