"""Dataset and artifact I/O.

Formats
-------
detections CSV   ``frame,class,left,top,right,bottom,score``
ground-truth CSV ``frame,id,class,left,top,right,bottom``
tracks CSV       ``frame,track_id,class,left,top,right,bottom,score``
attention        8-bit grayscale PGM (P2/P5) or PNG, value/255; or an RPT1
                 container with A=1 and depth 1
manifest         ``key = value`` lines; relative paths resolve against the
                 manifest's directory

CSV files may start with a header line beginning with ``frame``.
"""
from __future__ import annotations

import csv
import xml.etree.ElementTree as ET
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DegenerateBox, MalformedRow, UnsupportedFormat
from .model import AttentionGrid, AttentionKind, BBox, ClassLabel, Detection, FrameObservation, TrackRecord
from .rpfilter import MAGIC, read_grid_container


def _fmt(x: float) -> str:
    # shortest repr that round-trips exactly
    return repr(float(x))


def _is_header(row: Sequence[str]) -> bool:
    return bool(row) and row[0].strip().lower() == "frame"


def _rows(path):
    """Yield (line_number, fields) for non-blank, non-comment CSV rows."""
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            if lineno == 1 and _is_header(row):
                continue
            yield lineno, [c.strip() for c in row]


def _box(vals, lineno, path) -> BBox:
    try:
        return BBox(*(float(v) for v in vals))
    except ValueError as exc:
        raise MalformedRow(str(exc), lineno, path) from None
    except DegenerateBox as exc:
        raise MalformedRow(f"invalid box: {exc}", lineno, path) from None


# -- KITTI -----------------------------------------------------------------------

@dataclass(frozen=True)
class KittiLabel:
    frame: int
    track_id: int
    type: str
    truncated: float
    occluded: int
    alpha: float
    bbox: BBox
    dimensions: Tuple[float, float, float]
    location: Tuple[float, float, float]
    rotation_y: float
    score: Optional[float] = None

    @property
    def dont_care(self) -> bool:
        return self.type == "DontCare"

    @property
    def class_label(self) -> ClassLabel:
        return ClassLabel.parse(self.type)


def parse_kitti_labels(path) -> Dict[int, List[KittiLabel]]:
    """Parse a KITTI tracking label file into ``{frame: [labels]}``.

    DontCare rows are kept; check :attr:`KittiLabel.dont_care`.
    """
    out: Dict[int, List[KittiLabel]] = defaultdict(list)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) not in (17, 18):
                raise MalformedRow(f"expected 17 or 18 fields, got {len(parts)}", lineno, path)
            try:
                frame, tid = int(parts[0]), int(parts[1])
                trunc, occ, alpha = float(parts[3]), int(float(parts[4])), float(parts[5])
                nums = [float(v) for v in parts[10:17]]
                score = float(parts[17]) if len(parts) == 18 else None
            except ValueError as exc:
                raise MalformedRow(str(exc), lineno, path) from None
            if frame < 0:
                raise MalformedRow("negative frame index", lineno, path)
            bbox = _box(parts[6:10], lineno, path)
            out[frame].append(
                KittiLabel(frame, tid, parts[2], trunc, occ, alpha, bbox,
                           tuple(nums[0:3]), tuple(nums[3:6]), nums[6], score)
            )
    return dict(out)


def write_kitti_labels(labels: Sequence[KittiLabel], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for lb in labels:
            vals = [lb.frame, lb.track_id, lb.type, _fmt(lb.truncated), lb.occluded, _fmt(lb.alpha),
                    *map(_fmt, lb.bbox.as_tuple()), *map(_fmt, lb.dimensions),
                    *map(_fmt, lb.location), _fmt(lb.rotation_y)]
            if lb.score is not None:
                vals.append(_fmt(lb.score))
            fh.write(" ".join(str(v) for v in vals) + "\n")


def kitti_ground_truth(labels: Dict[int, List[KittiLabel]], classes=None) -> Dict[int, List[Tuple[int, BBox]]]:
    """Drop DontCare rows and, optionally, restrict to some classes."""
    out = {}
    for frame, rows in labels.items():
        keep = [(lb.track_id, lb.bbox) for lb in rows
                if not lb.dont_care and (classes is None or lb.type in classes)]
        out[frame] = keep
    return out


# -- detections, ground truth, tracks -------------------------------------------

def parse_detections(path, num_frames: Optional[int] = None) -> List[FrameObservation]:
    """Group detection rows by frame; frames without rows yield empty observations."""
    by_frame: Dict[int, List[Tuple[int, Detection]]] = defaultdict(list)
    for lineno, row in _rows(path):
        if len(row) != 7:
            raise MalformedRow(f"expected 7 fields, got {len(row)}", lineno, path)
        try:
            frame = int(row[0])
            score = float(row[6])
        except ValueError as exc:
            raise MalformedRow(str(exc), lineno, path) from None
        if frame < 0:
            raise MalformedRow("negative frame index", lineno, path)
        if not (0.0 <= score <= 1.0):
            raise MalformedRow(f"score {score} outside [0, 1]", lineno, path)
        bbox = _box(row[2:6], lineno, path)
        by_frame[frame].append((lineno, Detection(frame, ClassLabel.parse(row[1]), bbox, score)))
    n = num_frames if num_frames is not None else (max(by_frame) + 1 if by_frame else 0)
    out = []
    for k in range(n):
        # canonical order: independent of row order in the file
        dets = sorted((d for _, d in by_frame.get(k, [])),
                      key=lambda d: (d.bbox.as_tuple(), -d.score, d.class_label.value))
        out.append(FrameObservation(k, dets))
    return out


def write_detections(observations: Sequence[FrameObservation], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("frame,class,left,top,right,bottom,score\n")
        for obs in observations:
            for d in obs.detections:
                fh.write(",".join([str(d.frame_index), d.class_label.value,
                                   *map(_fmt, d.bbox.as_tuple()), _fmt(d.score)]) + "\n")


def parse_ground_truth(path) -> Dict[int, List[Tuple[int, BBox]]]:
    """Ground truth from the CSV format, or from a KITTI label file (``.txt``)."""
    if str(path).endswith(".txt"):
        return kitti_ground_truth(parse_kitti_labels(path))
    out: Dict[int, List[Tuple[int, BBox]]] = defaultdict(list)
    for lineno, row in _rows(path):
        if len(row) != 7:
            raise MalformedRow(f"expected 7 fields, got {len(row)}", lineno, path)
        try:
            frame, gid = int(row[0]), int(row[1])
        except ValueError as exc:
            raise MalformedRow(str(exc), lineno, path) from None
        out[frame].append((gid, _box(row[3:7], lineno, path)))
    return dict(out)


def write_ground_truth(gt: Dict[int, List[Tuple[int, BBox]]], path, labels: Optional[Dict[int, ClassLabel]] = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("frame,id,class,left,top,right,bottom\n")
        for frame in sorted(gt):
            for gid, box in gt[frame]:
                cls = (labels or {}).get(gid, ClassLabel.CAR).value
                fh.write(",".join([str(frame), str(gid), cls, *map(_fmt, box.as_tuple())]) + "\n")


def write_tracks(records: Sequence[TrackRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("frame,track_id,class,left,top,right,bottom,score\n")
        for r in records:
            fh.write(",".join([str(r.frame), str(r.track_id), r.class_label.value,
                               *map(_fmt, r.bbox.as_tuple()), _fmt(r.score)]) + "\n")


def parse_tracks(path) -> List[TrackRecord]:
    out = []
    for lineno, row in _rows(path):
        if len(row) != 8:
            raise MalformedRow(f"expected 8 fields, got {len(row)}", lineno, path)
        try:
            frame, tid, score = int(row[0]), int(row[1]), float(row[7])
        except ValueError as exc:
            raise MalformedRow(str(exc), lineno, path) from None
        if frame < 0:
            raise MalformedRow("negative frame index", lineno, path)
        out.append(TrackRecord(frame, tid, ClassLabel.parse(row[2]), _box(row[3:7], lineno, path), score))
    return out


def tracks_by_frame(records: Sequence[TrackRecord]) -> Dict[int, List[Tuple[int, BBox]]]:
    out: Dict[int, List[Tuple[int, BBox]]] = defaultdict(list)
    for r in records:
        out[r.frame].append((r.track_id, r.bbox))
    return dict(out)


# -- rasters -----------------------------------------------------------------

def _pgm_tokens(data: bytes):
    """Header tokens of a PNM file and the offset just past the last one."""
    tokens, i = [], 0
    while len(tokens) < 4:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        if j == i:
            raise UnsupportedFormat("truncated PGM header")
        tokens.append(data[i:j])
        i = j
    return tokens, i + 1


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:2] not in (b"P5", b"P2"):
        raise UnsupportedFormat(f"{path}: not a grayscale PGM")
    (magic, w, h, maxval), off = _pgm_tokens(data)
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise UnsupportedFormat(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    if magic == b"P5":
        raw = np.frombuffer(data[off:off + w * h], dtype=np.uint8)
    else:
        raw = np.array(data[off:].split(), dtype=np.int64)[: w * h].astype(np.uint8)
    if raw.size != w * h:
        raise UnsupportedFormat(f"{path}: pixel data truncated")
    return raw.reshape(h, w)


def write_pgm(path, pixels: np.ndarray) -> None:
    px = np.asarray(pixels, dtype=np.uint8)
    h, w = px.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(px.tobytes())


def grid_to_pixels(grid: AttentionGrid) -> np.ndarray:
    return np.rint(grid.values * 255.0).astype(np.uint8)


def load_attention(path, kind=AttentionKind.OBJECTNESS) -> AttentionGrid:
    kind = AttentionKind(kind)
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head[:4] == MAGIC:
        return read_grid_container(path, kind)
    if head[:2] in (b"P5", b"P2"):
        return AttentionGrid(read_pgm(path) / 255.0, kind)
    if head == b"\x89PNG\r\n\x1a\n":
        from PIL import Image

        with Image.open(path) as im:
            if im.mode not in ("L", "P"):
                raise UnsupportedFormat(f"{path}: PNG mode {im.mode} is not 8-bit grayscale")
            px = np.asarray(im.convert("L"), dtype=float)
        return AttentionGrid(px / 255.0, kind)
    raise UnsupportedFormat(f"{path}: unrecognised attention format")


def load_image(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_image(path, rgb: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(np.asarray(rgb, dtype=np.uint8), "RGB").save(path, format="PNG")


# -- manifest ----------------------------------------------------------------

FRAME_NAME = "{:06d}"


@dataclass
class SequenceManifest:
    sequence: str
    frames: int
    detections: Path
    images: Optional[Path] = None
    attention: Optional[Path] = None
    ground_truth: Optional[Path] = None
    attention_kind: AttentionKind = AttentionKind.OBJECTNESS

    def image_path(self, k: int) -> Optional[Path]:
        if self.images is None:
            return None
        p = self.images / (FRAME_NAME.format(k) + ".png")
        return p if p.exists() else None

    def attention_path(self, k: int) -> Optional[Path]:
        if self.attention is None:
            return None
        for ext in (".pgm", ".png", ".rpt"):
            p = self.attention / (FRAME_NAME.format(k) + ext)
            if p.exists():
                return p
        return None


_MANIFEST_KEYS = {"sequence", "frames", "detections", "images", "attention", "ground_truth", "attention_kind"}


def read_manifest(path) -> SequenceManifest:
    path = Path(path)
    base = path.parent
    vals = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise MalformedRow("expected 'key = value'", lineno, path)
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in _MANIFEST_KEYS:
                raise MalformedRow(f"unknown manifest key {key!r}", lineno, path)
            vals[key] = val
    for req in ("sequence", "frames", "detections"):
        if req not in vals:
            raise MalformedRow(f"manifest missing {req!r}", None, path)
    try:
        frames = int(vals["frames"])
    except ValueError:
        raise MalformedRow(f"bad frame count {vals['frames']!r}", None, path) from None

    def resolve(key):
        if not vals.get(key):
            return None
        p = Path(vals[key])
        p = p if p.is_absolute() else base / p
        if not p.exists():
            raise FileNotFoundError(f"{path}: {key} path {p} does not exist")
        return p

    return SequenceManifest(
        sequence=vals["sequence"],
        frames=frames,
        detections=resolve("detections"),
        images=resolve("images"),
        attention=resolve("attention"),
        ground_truth=resolve("ground_truth"),
        attention_kind=AttentionKind(vals.get("attention_kind", "objectness")),
    )


def write_manifest(m: SequenceManifest, path) -> None:
    path = Path(path)
    base = path.parent.resolve()

    def rel(p):
        if p is None:
            return None
        p = Path(p).resolve()
        try:
            return p.relative_to(base).as_posix()
        except ValueError:
            return p.as_posix()

    lines = [f"sequence = {m.sequence}", f"frames = {m.frames}", f"detections = {rel(m.detections)}"]
    for key in ("images", "attention", "ground_truth"):
        v = rel(getattr(m, key))
        if v is not None:
            lines.append(f"{key} = {v}")
    lines.append(f"attention_kind = {m.attention_kind.value}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_sequence(m: SequenceManifest, attention_kind: Optional[str] = None, with_images: bool = True) -> List[FrameObservation]:
    """Observations for every frame of a manifest, with rasters attached.

    ``attention_kind='none'`` skips attention maps entirely.
    """
    obs = parse_detections(m.detections, m.frames)
    kind = attention_kind or m.attention_kind.value
    for o in obs:
        if kind != "none":
            ap = m.attention_path(o.frame_index)
            if ap is not None:
                o.attention = load_attention(ap, kind)
        if with_images:
            ip = m.image_path(o.frame_index)
            if ip is not None:
                o.image = load_image(ip)
    return obs


# -- DETRAC conversion -------------------------------------------------------

_DETRAC_CLASSES = {"car": ClassLabel.CAR}


def convert_detrac(xml_path, gt_out, stride: int = 1) -> int:
    """Convert a DETRAC sequence annotation to the ground-truth CSV.

    Keeps every ``stride``-th frame (frame numbers 1, 1+stride, ...) and
    renumbers kept frames from 0. Returns the number of kept frames.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    try:
        root = ET.parse(xml_path).getroot()
    except ET.ParseError as exc:
        raise UnsupportedFormat(f"{xml_path}: {exc}") from None
    gt: Dict[int, List[Tuple[int, BBox]]] = {}
    labels: Dict[int, ClassLabel] = {}
    kept = 0
    for frame in root.iter("frame"):
        num = int(frame.get("num"))
        if (num - 1) % stride:
            continue
        k = (num - 1) // stride
        kept = max(kept, k + 1)
        rows = []
        for tgt in frame.iter("target"):
            box = tgt.find("box")
            left, top = float(box.get("left")), float(box.get("top"))
            w, h = float(box.get("width")), float(box.get("height"))
            gid = int(tgt.get("id"))
            attr = tgt.find("attribute")
            vtype = attr.get("vehicle_type", "") if attr is not None else ""
            labels[gid] = _DETRAC_CLASSES.get(vtype.lower(), ClassLabel.OTHER)
            rows.append((gid, BBox(left, top, left + w, top + h)))
        gt[k] = rows
    write_ground_truth(gt, gt_out, labels)
    return kept
