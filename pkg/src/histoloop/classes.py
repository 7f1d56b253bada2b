"""The six-class tissue taxonomy used everywhere in the pipeline.

Class order is fixed and serialized into every artifact so that label
indices never drift between training, prediction, and export.
"""

CLASSES = (
    "Epithelium",
    "Stroma",
    "Lymphocytes",
    "Adipose",
    "Artifact",
    "Miscellaneous",
)

NUM_CLASSES = len(CLASSES)

CLASS_INDEX = {name: i for i, name in enumerate(CLASSES)}

# Sentinel label for patches dropped after the second annotation round.
DISCARDED = "Discarded"

# Default display colors (RGB) for overlays, heatmaps, and GeoJSON export.
CLASS_COLORS = {
    "Epithelium": (200, 0, 0),
    "Stroma": (0, 160, 0),
    "Lymphocytes": (70, 30, 180),
    "Adipose": (255, 200, 0),
    "Artifact": (60, 60, 60),
    "Miscellaneous": (0, 170, 200),
}


def validate_class(name: str) -> str:
    if name not in CLASS_INDEX:
        raise ValueError(f"unknown class {name!r}; expected one of {CLASSES}")
    return name
