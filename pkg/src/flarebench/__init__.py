"""Emergency-flasher robustness benchmark for object-detector confidence."""

__version__ = "0.1.0"

from .core import (BoundingBox, ConfidenceSignal, Detection, Frame, VideoSequence, iou,
                   load_sequence, mean_brightness, save_sequence)

__all__ = [
    "BoundingBox", "ConfidenceSignal", "Detection", "Frame", "VideoSequence", "iou",
    "load_sequence", "mean_brightness", "save_sequence", "__version__",
]
