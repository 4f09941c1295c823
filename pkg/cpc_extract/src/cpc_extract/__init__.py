"""Adapter from pretrained CPC speech models to zrspeech feature archives.

Loads a published checkpoint, runs the convolutional encoder and LSTM
context network over WAV files, and writes the selected layer's hidden
states (one 512-dim frame per 10 ms) in the zrspeech archive format, so
the evaluation toolkit can run on real speech features.
"""

__version__ = "0.1.0"

from .archive import write_archive
from .extract import (
    FRAME_PERIOD_US,
    MODES,
    AudioError,
    ExtractConfig,
    ExtractReport,
    extract_features,
    read_wav,
)
from .model import (
    CONTEXT_HIDDEN,
    CONTEXT_LAYERS,
    HOP_SAMPLES,
    CheckpointError,
    CpcEncoder,
    LayerError,
    conv_frame_count,
    load_checkpoint,
    new_model,
    save_checkpoint,
)

__all__ = [name for name in dir() if not name.startswith("_")]
