"""Shared geometric and observation types."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateBox, DimensionMismatch


class ClassLabel(str, enum.Enum):
    CAR = "Car"
    PEDESTRIAN = "Pedestrian"
    CYCLIST = "Cyclist"
    OTHER = "Other"

    @classmethod
    def parse(cls, text: str) -> "ClassLabel":
        for member in cls:
            if member.value.lower() == text.strip().lower():
                return member
        return cls.OTHER


class AttentionKind(str, enum.Enum):
    OBJECTNESS = "objectness"
    SUBJECTNESS = "subjectness"


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in continuous pixel coordinates (no +1 area convention)."""

    left: float
    top: float
    right: float
    bottom: float

    def __post_init__(self):
        vals = (self.left, self.top, self.right, self.bottom)
        if not all(math.isfinite(v) for v in vals):
            raise DegenerateBox(f"non-finite box {vals}")
        if not (self.left < self.right and self.top < self.bottom):
            raise DegenerateBox(f"box has no area: {vals}")

    @property
    def width(self) -> float:
        return self.right - self.left

    @property
    def height(self) -> float:
        return self.bottom - self.top

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_array(self) -> np.ndarray:
        return np.array([self.left, self.top, self.right, self.bottom], dtype=float)

    def as_tuple(self) -> tuple:
        return (self.left, self.top, self.right, self.bottom)

    @classmethod
    def from_array(cls, arr) -> "BBox":
        l, t, r, b = (float(v) for v in arr)
        return cls(l, t, r, b)

    @classmethod
    def from_center(cls, cx, cy, w, h) -> "BBox":
        return cls(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)


@dataclass(frozen=True)
class Detection:
    frame_index: int
    class_label: ClassLabel
    bbox: BBox
    score: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"detection score {self.score} outside [0, 1]")


@dataclass(eq=False)
class AttentionGrid:
    """Scalar attention map, values in [0, 1], stored as a (height, width) array."""

    values: np.ndarray
    kind: AttentionKind = AttentionKind.OBJECTNESS

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise DimensionMismatch(f"attention grid must be 2-D, got shape {v.shape}")
        if v.size and (not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0):
            raise ValueError("attention values must lie in [0, 1]")
        self.values = v

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def integral(self) -> np.ndarray:
        """Summed-area table, shape (height + 1, width + 1); cached."""
        sat = getattr(self, "_sat", None)
        if sat is None:
            sat = np.zeros((self.height + 1, self.width + 1))
            sat[1:, 1:] = self.values.cumsum(0).cumsum(1)
            self._sat = sat
        return sat

    def flat(self) -> np.ndarray:
        """Row-major values, location index = row * width + col."""
        return self.values.reshape(-1)


@dataclass
class FrameObservation:
    frame_index: int
    detections: Sequence[Detection] = field(default_factory=list)
    attention: Optional[AttentionGrid] = None
    image: Optional[np.ndarray] = None  # (H, W, 3) uint8 RGB

    def __post_init__(self):
        for det in self.detections:
            if det.frame_index != self.frame_index:
                raise ValueError(
                    f"detection frame {det.frame_index} in observation {self.frame_index}"
                )


@dataclass(frozen=True)
class TrackRecord:
    """One row of tracker output."""

    frame: int
    track_id: int
    class_label: ClassLabel
    bbox: BBox
    score: float

    def __post_init__(self):
        if self.frame < 0:
            raise ValueError(f"negative frame index {self.frame}")


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.right, b.right) - max(a.left, b.left)
    ih = min(a.bottom, b.bottom) - max(a.top, b.top)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_many(box, boxes: np.ndarray) -> np.ndarray:
    """IoU of one box (array or BBox) against an (N, 4) corner array."""
    if isinstance(box, BBox):
        box = box.as_array()
    boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
    iw = np.minimum(box[2], boxes[:, 2]) - np.maximum(box[0], boxes[:, 0])
    ih = np.minimum(box[3], boxes[:, 3]) - np.maximum(box[1], boxes[:, 1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    area_a = (box[2] - box[0]) * (box[3] - box[1])
    area_b = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    union = area_a + area_b - inter
    out = np.zeros(len(boxes))
    ok = union > 0
    out[ok] = inter[ok] / union[ok]
    return out


def box_center(b: BBox) -> tuple:
    return ((b.left + b.right) / 2.0, (b.top + b.bottom) / 2.0)


def clamp_box(b: BBox, w: float, h: float) -> BBox:
    if w <= 0 or h <= 0:
        raise ValueError("frame dimensions must be positive")
    l, t = max(b.left, 0.0), max(b.top, 0.0)
    r, btm = min(b.right, float(w)), min(b.bottom, float(h))
    if not (l < r and t < btm):
        raise DegenerateBox(f"{b.as_tuple()} lies outside the {w}x{h} frame")
    return BBox(l, t, r, btm)


def pixel_span(lo: float, hi: float, limit: int) -> tuple:
    """Half-open index range of pixels whose centres fall in [lo, hi), clipped to [0, limit)."""
    start = math.ceil(lo - 0.5)
    stop = math.ceil(hi - 0.5)
    return max(start, 0), min(max(stop, 0), limit)
