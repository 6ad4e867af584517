"""Synthetic acoustic scene generation and few-shot bioacoustic sound event
detection: preprocessing, scene synthesis with strong labels, training-free
detectors, benchmark construction, and IoU-matched F1 evaluation.
"""

from .core import (
    AudioBuffer,
    EventInterval,
    EventList,
    FrameMask,
    Scene,
    SupportQueryExample,
    intervals_to_mask,
    mask_to_intervals,
    merge_overlaps,
)
from .dsp import MelSpec, ZeroShotFeatures

__all__ = [
    "AudioBuffer",
    "EventInterval",
    "EventList",
    "FrameMask",
    "Scene",
    "SupportQueryExample",
    "MelSpec",
    "ZeroShotFeatures",
    "intervals_to_mask",
    "mask_to_intervals",
    "merge_overlaps",
]

__version__ = "0.1.0"
