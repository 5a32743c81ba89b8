"""Offline activation extractor: audio and text history -> EMBX files."""

from .audio import TARGET_SAMPLES, prepare_audio
from .embx_io import write_activation, write_manifest

__version__ = "0.1.0"

__all__ = [
    "TARGET_SAMPLES",
    "prepare_audio",
    "write_activation",
    "write_manifest",
    "__version__",
]
