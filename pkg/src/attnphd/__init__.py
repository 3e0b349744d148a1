"""Attention-guided proposal filtering and particle-PHD multi-object tracking."""
from .model import AttentionGrid, AttentionKind, BBox, ClassLabel, Detection, FrameObservation, TrackRecord, box_center, clamp_box, iou
from .phdtracker import PHDTracker, TrackerConfig

__all__ = [
    "AttentionGrid", "AttentionKind", "BBox", "ClassLabel", "Detection", "FrameObservation", "TrackRecord",
    "box_center", "clamp_box", "iou", "PHDTracker", "TrackerConfig",
]
__version__ = "0.1.0"
