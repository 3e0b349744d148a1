"""Detection-to-track assignment and track lifecycle."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .appearance import FrameHistograms, TemporalHistogram, bhattacharyya
from .model import BBox, ClassLabel, Detection, iou

DEFAULT_GATE = 0.8
DEFAULT_MAX_MISSES = 2


@dataclass
class Track:
    track_id: int
    class_label: ClassLabel
    last_box: BBox
    history: List[Tuple[int, BBox]] = field(default_factory=list)
    temporal_histogram: Optional[TemporalHistogram] = None
    predicted_box: Optional[BBox] = None
    misses: int = 0
    score: float = 1.0
    # filter internals, owned by the tracker
    kalman: Any = None
    particles: Any = None

    @property
    def association_box(self) -> BBox:
        return self.predicted_box if self.predicted_box is not None else self.last_box


@dataclass
class Assignment:
    pairs: List[Tuple[int, int]]
    unmatched_tracks: List[int]
    unmatched_detections: List[int]

    def total_cost(self, costs) -> float:
        return float(sum(costs[r][c] for r, c in self.pairs))


def build_cost(
    tracks: Sequence[Track],
    detections: Sequence[Detection],
    image=None,
    iou_weight: float = 0.5,
) -> np.ndarray:
    """Blend of box overlap and appearance distance, each entry in [0, 1].

    ``image`` may be an RGB raster or a prepared :class:`FrameHistograms`.
    Without an image, or for tracks that have no appearance yet, the cost
    is overlap only.
    """
    costs = np.zeros((len(tracks), len(detections)))
    if not len(tracks) or not len(detections):
        return costs
    frame = None
    if image is not None:
        frame = image if isinstance(image, FrameHistograms) else FrameHistograms(image)
    det_hists = [frame.histogram_or_none(d.bbox.as_tuple()) if frame else None for d in detections]
    for i, trk in enumerate(tracks):
        box = trk.association_box
        for j, det in enumerate(detections):
            overlap_cost = 1.0 - iou(box, det.bbox)
            hist = det_hists[j]
            if hist is None or trk.temporal_histogram is None:
                costs[i, j] = overlap_cost
            else:
                app = bhattacharyya(trk.temporal_histogram, hist)
                costs[i, j] = iou_weight * overlap_cost + (1.0 - iou_weight) * app
    return costs


def hungarian(costs, gate: Optional[float] = DEFAULT_GATE) -> Assignment:
    """Minimum-cost assignment; rectangular matrices are allowed.

    Pairs whose cost exceeds ``gate`` are demoted to unmatched afterwards.
    """
    c = np.asarray(costs, dtype=float)
    if c.ndim != 2:
        c = c.reshape(len(c), -1)
    n_rows, n_cols = c.shape
    pairs = []
    if n_rows and n_cols:
        rows, cols = linear_sum_assignment(c)
        for r, k in zip(rows.tolist(), cols.tolist()):
            if gate is None or c[r, k] <= gate:
                pairs.append((r, k))
    pairs.sort()
    used_r = {r for r, _ in pairs}
    used_c = {k for _, k in pairs}
    return Assignment(
        pairs=pairs,
        unmatched_tracks=[r for r in range(n_rows) if r not in used_r],
        unmatched_detections=[k for k in range(n_cols) if k not in used_c],
    )


@dataclass
class LifecycleResult:
    live: List[Track]
    terminated: List[Track]
    born: List[Track]
    matched: List[Tuple[Track, Detection]]
    missed: List[Track]


def lifecycle_step(
    tracks: Sequence[Track],
    assignment: Assignment,
    detections: Sequence[Detection],
    frame_index: int,
    id_source: Iterator[int],
    max_misses: int = DEFAULT_MAX_MISSES,
) -> LifecycleResult:
    """Apply an assignment: reset or bump miss counters, terminate, spawn.

    A track is terminated on its ``max_misses``-th consecutive miss. Unmatched
    detections start tracks immediately, with ids drawn from ``id_source``.
    """
    matched_idx = dict(assignment.pairs)
    live, terminated, matched, missed = [], [], [], []
    for i, trk in enumerate(tracks):
        if i in matched_idx:
            det = detections[matched_idx[i]]
            trk.misses = 0
            trk.last_box = det.bbox
            trk.history.append((frame_index, det.bbox))
            matched.append((trk, det))
            live.append(trk)
        else:
            trk.misses += 1
            if trk.misses >= max_misses:
                terminated.append(trk)
            else:
                missed.append(trk)
                live.append(trk)
    born = []
    for j in assignment.unmatched_detections:
        det = detections[j]
        trk = Track(
            track_id=next(id_source),
            class_label=det.class_label,
            last_box=det.bbox,
            history=[(frame_index, det.bbox)],
            score=det.score,
        )
        born.append(trk)
        live.append(trk)
    return LifecycleResult(live, terminated, born, matched, missed)
