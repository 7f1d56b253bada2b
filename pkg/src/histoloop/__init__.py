"""histoloop: human-in-the-loop patch annotation, training, and slide QC."""

from .classes import CLASSES, CLASS_COLORS, CLASS_INDEX, DISCARDED, NUM_CLASSES

__version__ = "0.1.0"

__all__ = [
    "CLASSES",
    "CLASS_COLORS",
    "CLASS_INDEX",
    "DISCARDED",
    "NUM_CLASSES",
    "__version__",
]
