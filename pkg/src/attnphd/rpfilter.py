"""Attention-guided, location-aware region-proposal filtering.

A proposal tensor holds, for each of the ``H*W`` feature locations and each of
the ``A`` anchors, an objectness score followed by four box-regression values.
Filtering keeps the top-``n`` anchors of every location whose attention value
satisfies a threshold condition, which typically reduces the proposal count by
one to two orders of magnitude.
"""
from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .errors import DimensionMismatch, InvalidN, NonFinite, UnsupportedFormat
from .model import AttentionGrid, AttentionKind, BBox, clamp_box

MAGIC = b"RPT1"
DEFAULT_TAU = 0.4
DEFAULT_NMS_IOU = 0.7


class Direction(str, enum.Enum):
    AT_LEAST = "at_least"
    BELOW = "below"


@dataclass(frozen=True)
class FilterCondition:
    tau: float = DEFAULT_TAU
    direction: Direction = Direction.AT_LEAST
    n: int = 1

    def __post_init__(self):
        if not (0.0 <= self.tau <= 1.0):
            raise ValueError(f"threshold {self.tau} outside [0, 1]")
        if self.n < 1:
            raise InvalidN(f"n must be positive, got {self.n}")


@dataclass(frozen=True)
class AnchorSpec:
    sizes: Tuple[float, ...] = (4, 8, 16, 32)
    ratios: Tuple[float, ...] = (0.5, 1, 2)
    stride: float = 16.0

    def __post_init__(self):
        if not self.sizes or not self.ratios:
            raise ValueError("anchor sizes and ratios must be nonempty")
        if any(s <= 0 for s in self.sizes) or any(r <= 0 for r in self.ratios):
            raise ValueError("anchor sizes and ratios must be positive")
        if self.stride <= 0:
            raise ValueError("stride must be positive")

    @property
    def num_anchors(self) -> int:
        return len(self.sizes) * len(self.ratios)


@dataclass(eq=False)
class ProposalTensor:
    """Proposal scores and regressions, ``data`` shaped (H*W, A, 5)."""

    h: int
    w: int
    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=float)
        if d.ndim != 3 or d.shape[0] != self.h * self.w or d.shape[2] != 5:
            raise DimensionMismatch(
                f"tensor shape {d.shape} inconsistent with H={self.h}, W={self.w}"
            )
        if not np.all(np.isfinite(d[:, :, 0])):
            raise NonFinite("objectness scores must be finite")
        self.data = d

    @property
    def a(self) -> int:
        return self.data.shape[1]

    @property
    def scores(self) -> np.ndarray:
        return self.data[:, :, 0]

    @property
    def regressions(self) -> np.ndarray:
        return self.data[:, :, 1:5]

    @property
    def size(self) -> int:
        return self.data.shape[0] * self.data.shape[1]


@dataclass(frozen=True)
class Proposal:
    bbox: BBox
    objectness: float
    source_location: Tuple[int, int]
    anchor_index: int
    source_layer: int = 0


def topn_indices(tensor: ProposalTensor, n: int) -> np.ndarray:
    """Per-location indices of the ``n`` highest-scoring anchors, shape (H*W, n).

    Ties go to the lower anchor index (stable sort on negated scores).
    """
    if n < 1 or n > tensor.a:
        raise InvalidN(f"n={n} must be in [1, A={tensor.a}]")
    order = np.argsort(-tensor.scores, axis=1, kind="stable")
    return order[:, :n]


def attention_select(m: AttentionGrid, cond: FilterCondition, h=None, w=None) -> np.ndarray:
    """Sorted row-major location indices of ``m`` that satisfy ``cond``."""
    if h is not None and (m.height, m.width) != (h, w):
        raise DimensionMismatch(
            f"attention grid {m.height}x{m.width} does not match feature map {h}x{w}"
        )
    flat = m.flat()
    if cond.direction == Direction.AT_LEAST:
        mask = flat >= cond.tau
    else:
        mask = flat < cond.tau
    return np.flatnonzero(mask)


def generate_anchors(spec: AnchorSpec, h: int, w: int) -> np.ndarray:
    """Corner-format anchors shaped (H*W, A, 4), size-major / ratio-minor."""
    base = []
    for s in spec.sizes:
        for r in spec.ratios:
            aw = s * spec.stride * math.sqrt(r)
            ah = s * spec.stride / math.sqrt(r)
            base.append((aw, ah))
    base = np.array(base, dtype=float)
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    cx = ((cols.reshape(-1) + 0.5) * spec.stride)[:, None]
    cy = ((rows.reshape(-1) + 0.5) * spec.stride)[:, None]
    out = np.empty((h * w, len(base), 4))
    out[:, :, 0] = cx - base[:, 0] / 2
    out[:, :, 1] = cy - base[:, 1] / 2
    out[:, :, 2] = cx + base[:, 0] / 2
    out[:, :, 3] = cy + base[:, 1] / 2
    return out


def encode_bbox(anchor: BBox, target: BBox) -> np.ndarray:
    """Inverse of :func:`decode_bbox`."""
    aw, ah = anchor.width, anchor.height
    acx, acy = anchor.left + aw / 2, anchor.top + ah / 2
    tw, th = target.width, target.height
    tcx, tcy = target.left + tw / 2, target.top + th / 2
    return np.array([(tcx - acx) / aw, (tcy - acy) / ah, math.log(tw / aw), math.log(th / ah)])


def _decode(anchors: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    aw = anchors[..., 2] - anchors[..., 0]
    ah = anchors[..., 3] - anchors[..., 1]
    cx = anchors[..., 0] + aw / 2 + deltas[..., 0] * aw
    cy = anchors[..., 1] + ah / 2 + deltas[..., 1] * ah
    with np.errstate(over="ignore"):
        pw = aw * np.exp(deltas[..., 2])
        ph = ah * np.exp(deltas[..., 3])
    out = np.stack([cx - pw / 2, cy - ph / 2, cx + pw / 2, cy + ph / 2], axis=-1)
    if not np.all(np.isfinite(out)):
        raise NonFinite("box decoding overflowed")
    return out


def decode_bbox(anchor: BBox, regression: Sequence[float]) -> BBox:
    out = _decode(anchor.as_array(), np.asarray(regression, dtype=float))
    if not (out[0] < out[2] and out[1] < out[3]):
        raise NonFinite("decoded box collapsed to zero size")
    return BBox.from_array(out)


def _clamp_into_frame(box: np.ndarray, frame) -> BBox:
    # Shift the centre inside the frame first so clamping never empties the box.
    fw, fh = frame
    cx = min(max((box[0] + box[2]) / 2, 0.0), fw)
    cy = min(max((box[1] + box[3]) / 2, 0.0), fh)
    hw, hh = (box[2] - box[0]) / 2, (box[3] - box[1]) / 2
    return clamp_box(BBox(cx - hw, cy - hh, cx + hw, cy + hh), fw, fh)


def filter_proposals(
    tensor: ProposalTensor,
    m: AttentionGrid,
    cond: FilterCondition,
    anchors: AnchorSpec,
    frame=None,
    layer: int = 0,
) -> List[Proposal]:
    """Keep the top-``cond.n`` anchors at every location selected by ``cond``.

    Output is ordered by location, then by descending objectness within a
    location. ``frame`` is ``(width, height)``; when omitted it defaults to the
    feature map extent times the anchor stride.
    """
    if anchors.num_anchors != tensor.a:
        raise DimensionMismatch(
            f"anchor spec yields {anchors.num_anchors} anchors, tensor has A={tensor.a}"
        )
    if cond.n > tensor.a:
        raise InvalidN(f"n={cond.n} exceeds A={tensor.a}")
    locs = attention_select(m, cond, tensor.h, tensor.w)
    if frame is None:
        frame = (tensor.w * anchors.stride, tensor.h * anchors.stride)
    if len(locs) == 0:
        return []
    top = topn_indices(tensor, cond.n)[locs]  # (L, n)
    all_anchors = generate_anchors(anchors, tensor.h, tensor.w)
    sel_anchors = np.take_along_axis(all_anchors[locs], top[:, :, None], axis=1)
    sel_data = np.take_along_axis(tensor.data[locs], top[:, :, None], axis=1)
    boxes = _decode(sel_anchors, sel_data[:, :, 1:5])
    out = []
    for li, loc in enumerate(locs):
        rc = (int(loc // tensor.w), int(loc % tensor.w))
        for k in range(cond.n):
            out.append(
                Proposal(
                    bbox=_clamp_into_frame(boxes[li, k], frame),
                    objectness=float(sel_data[li, k, 0]),
                    source_location=rc,
                    anchor_index=int(top[li, k]),
                    source_layer=layer,
                )
            )
    return out


def combine_filters(
    tensor: ProposalTensor,
    m: AttentionGrid,
    anchors: AnchorSpec,
    frame=None,
    tau: float = DEFAULT_TAU,
    n_high: int = 4,
    n_low: int = 2,
) -> List[Proposal]:
    """Training-time union: top-4 where attention >= tau plus top-2 where below."""
    high = filter_proposals(tensor, m, FilterCondition(tau, Direction.AT_LEAST, n_high), anchors, frame)
    low = filter_proposals(tensor, m, FilterCondition(tau, Direction.BELOW, n_low), anchors, frame)
    return high + low


def proposal_fraction(num_kept: int, tensor: ProposalTensor) -> float:
    """Kept proposals as a fraction of all H*W*A proposals."""
    return num_kept / tensor.size


def nms(proposals: Sequence[Proposal], iou_threshold: float = DEFAULT_NMS_IOU) -> List[Proposal]:
    """Greedy non-maximum suppression; survivors ordered by descending objectness."""
    if not (0.0 < iou_threshold < 1.0):
        raise ValueError("iou_threshold must be in (0, 1)")
    if not proposals:
        return []
    boxes = np.array([p.bbox.as_array() for p in proposals])
    scores = np.array([p.objectness for p in proposals])
    order = np.argsort(-scores, kind="stable")
    x1, y1, x2, y2 = boxes.T
    areas = (x2 - x1) * (y2 - y1)
    keep = []
    while order.size:
        i = order[0]
        keep.append(i)
        rest = order[1:]
        iw = np.clip(np.minimum(x2[i], x2[rest]) - np.maximum(x1[i], x1[rest]), 0, None)
        ih = np.clip(np.minimum(y2[i], y2[rest]) - np.maximum(y1[i], y1[rest]), 0, None)
        inter = iw * ih
        ovr = inter / (areas[i] + areas[rest] - inter)
        order = rest[ovr < iou_threshold]
    return [proposals[i] for i in keep]


def downsample_attention(m: AttentionGrid, h: int, w: int) -> AttentionGrid:
    """Block-max pool an image-resolution map down to an ``h`` x ``w`` grid.

    Max rather than mean so that small salient blobs survive the threshold.
    """
    H, W = m.height, m.width
    if h < 1 or w < 1 or H < h or W < w:
        raise DimensionMismatch(f"cannot pool {H}x{W} down to {h}x{w}")
    rb = [(i * H) // h for i in range(h + 1)]
    cb = [(j * W) // w for j in range(w + 1)]
    if H % h == 0 and W % w == 0:
        out = m.values.reshape(h, H // h, w, W // w).max(axis=(1, 3))
    else:
        out = np.empty((h, w))
        for i in range(h):
            for j in range(w):
                out[i, j] = m.values[rb[i]:rb[i + 1], cb[j]:cb[j + 1]].max()
    return AttentionGrid(out, m.kind)


# -- binary container --------------------------------------------------------

def write_tensor(path, tensor: ProposalTensor) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<III", tensor.h, tensor.w, tensor.a))
        fh.write(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())


def write_grid_container(path, grid: AttentionGrid) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<III", grid.height, grid.width, 1))
        fh.write(np.ascontiguousarray(grid.values, dtype="<f4").tobytes())


def _read_container(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise UnsupportedFormat(f"{path}: missing RPT1 header")
    h, w, a = struct.unpack("<III", raw[4:16])
    payload = np.frombuffer(raw[16:], dtype="<f4")
    cells = h * w * a
    if cells == 0 or payload.size % cells:
        raise UnsupportedFormat(f"{path}: payload of {payload.size} floats does not fit {h}x{w}x{a}")
    return h, w, a, payload.size // cells, payload.astype(float)


def read_tensor(path) -> ProposalTensor:
    h, w, a, depth, payload = _read_container(path)
    if depth != 5:
        raise UnsupportedFormat(f"{path}: expected depth 5, found {depth}")
    return ProposalTensor(h, w, payload.reshape(h * w, a, 5))


def read_grid_container(path, kind=AttentionKind.OBJECTNESS) -> AttentionGrid:
    h, w, a, depth, payload = _read_container(path)
    if a != 1 or depth != 1:
        raise UnsupportedFormat(f"{path}: attention container needs A=1, depth=1")
    return AttentionGrid(np.clip(payload.reshape(h, w), 0.0, 1.0), kind)
