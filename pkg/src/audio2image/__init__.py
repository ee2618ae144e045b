"""Audio-to-image translation toolkit.

Turns short audio clips into images with a two-stage conditional GAN:
stage one renders a coarse image from the clip's log-mel spectrogram and
its class label, a frozen classifier reads the coarse image back into the
label domain, and stage two refines the image conditioned on the residue
between the audio label and the predicted label.
"""

__version__ = "0.1.0"

from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    ToolkitError,
    TrainingDiverged,
)

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DataError",
    "ToolkitError",
    "TrainingDiverged",
    "__version__",
]
