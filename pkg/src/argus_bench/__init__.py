"""Desk-scale toolkit for 3D CT radiology report generation experiments."""
__version__ = "0.1.0"

from .curation import CuratedRecord, DatasetManifest, RawRecord, curate, split_dataset
from .exceptions import ArgusError, ValidationError
from .tokens import MaskSet, TokenGrid, patchify, pixel_shuffle_3d, pixel_unshuffle_3d, unpatchify
from .volume import HIGH, MICRO, NORMAL, ResolutionProfile, Volume, preprocess

__all__ = [
    "ArgusError", "CuratedRecord", "DatasetManifest", "HIGH", "MICRO", "MaskSet", "NORMAL", "RawRecord",
    "ResolutionProfile", "TokenGrid", "ValidationError", "Volume", "__version__", "curate", "patchify",
    "pixel_shuffle_3d", "pixel_unshuffle_3d", "preprocess", "split_dataset", "unpatchify",
]
