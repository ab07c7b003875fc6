"""Checkpoint export into the ichseg model-interchange format."""

from .export import (
    ExportError,
    check_detector_parity,
    check_segmenter_parity,
    export_detector,
    export_segmenter,
)
from .fixtures import ParityFixture, load_fixtures, regenerate

__all__ = [
    "ExportError",
    "ParityFixture",
    "check_detector_parity",
    "check_segmenter_parity",
    "export_detector",
    "export_segmenter",
    "load_fixtures",
    "regenerate",
]

__version__ = "0.1.0"
