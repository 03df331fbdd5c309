"""Microbubble localization for super-resolution ultrasound using grayscale
morphological reconstruction (h-domes)."""

from .errors import ConfigError, DataError, FormatError, NumericalError, PreconditionError
from .grid import (
    Frame,
    FrameStack,
    GridGeometry,
    VesselMask,
    load_mask,
    load_stack,
    mask_from_image,
    normalize_stack,
    save_mask,
    save_stack,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "FormatError",
    "NumericalError",
    "PreconditionError",
    "Frame",
    "FrameStack",
    "GridGeometry",
    "VesselMask",
    "load_mask",
    "load_stack",
    "mask_from_image",
    "normalize_stack",
    "save_mask",
    "save_stack",
]
