"""Sleep motion monitoring over WiFi channel-state amplitude streams.

The package turns a per-subcarrier amplitude stream from a WiFi receiver
into a nightly motion log and real-time abnormality alerts:

- ``trace``: trace file format, sample model and framing.
- ``background``: adaptive per-subcarrier Gaussian-mixture background model
  separating still postures from in-place motion.
- ``filtering``: antenna merging and interference filters on foreground masks.
- ``events``: motion event segmentation, features and k-NN classification.
- ``guardian``: sleep log, abnormality rules and alert dispatch.
- ``simulate``: ground-truth-labeled synthetic trace generator.
- ``metrics``: detection/recognition scoring against ground truth.
- ``pipeline``: the streaming detection pipeline gluing the stages together.
"""

from sleepsentry.background import BackgroundModelBank, PixelLabel
from sleepsentry.events import MotionClass, MotionEvent, MotionKnn
from sleepsentry.filtering import (
    ForegroundMask,
    FrequencyTemporalFilter,
    MotionDensityFilter,
    merge_masks,
)
from sleepsentry.pipeline import MotionPipeline, PipelineParams
from sleepsentry.trace import CsiSample, Frame, FrameConfig, TraceFormatError

__version__ = "0.1.0"

__all__ = [
    "BackgroundModelBank",
    "CsiSample",
    "ForegroundMask",
    "Frame",
    "FrameConfig",
    "FrequencyTemporalFilter",
    "MotionClass",
    "MotionDensityFilter",
    "MotionEvent",
    "MotionKnn",
    "MotionPipeline",
    "PipelineParams",
    "PixelLabel",
    "TraceFormatError",
    "merge_masks",
]
