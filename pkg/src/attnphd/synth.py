"""Synthetic scenarios: ground truth, corrupted detections, attention maps, and
flat-colour RGB frames (one hue per target) for the appearance terms."""
from __future__ import annotations

import colorsys
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import DegenerateBox
from .model import AttentionGrid, AttentionKind, BBox, ClassLabel, Detection, FrameObservation, clamp_box, pixel_span

BACKGROUND = 128


@dataclass
class TargetSpec:
    birth: int
    death: int  # exclusive
    box: Tuple[float, float, float, float]
    velocity: Tuple[float, float]
    class_label: str = "Car"

    def __post_init__(self):
        self.box = tuple(float(v) for v in self.box)
        self.velocity = tuple(float(v) for v in self.velocity)


@dataclass
class ScenarioSpec:
    frames: int
    targets: List[TargetSpec]
    miss: float = 0.0
    clutter: float = 0.0
    noise: float = 0.0
    attention: str = "perfect"  # perfect | dilated | none
    seed: int = 0
    width: int = 320
    height: int = 240
    jitter: float = 0.0  # per-frame position jitter of the true motion, px
    dropout_every: int = 0  # drop every detection in frames k % d == d - 1
    render: bool = True

    def __post_init__(self):
        self.targets = [t if isinstance(t, TargetSpec) else TargetSpec(**t) for t in self.targets]
        if self.frames < 0:
            raise ValueError("frame count must be non-negative")
        for t in self.targets:
            if t.death <= t.birth:
                raise ValueError(f"target death {t.death} must exceed birth {t.birth}")
            BBox(*t.box)
        if not 0.0 <= self.miss <= 1.0:
            raise ValueError("miss probability must be in [0, 1]")
        if self.clutter < 0 or self.noise < 0 or self.jitter < 0:
            raise ValueError("clutter, noise and jitter must be non-negative")
        if self.attention not in ("perfect", "dilated", "none"):
            raise ValueError(f"unknown attention mode {self.attention!r}")

    @classmethod
    def from_json(cls, text: str) -> "ScenarioSpec":
        return cls(**json.loads(text))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


@dataclass
class Scenario:
    spec: ScenarioSpec
    ground_truth: Dict[int, List[Tuple[int, BBox]]]
    observations: List[FrameObservation]
    labels: Dict[int, ClassLabel] = field(default_factory=dict)

    @property
    def attention(self) -> List[Optional[AttentionGrid]]:
        return [o.attention for o in self.observations]


def target_color(gid: int) -> Tuple[int, int, int]:
    """Saturated colour with a hue spread by the golden angle per id."""
    hue = (gid * 0.381966) % 1.0
    r, g, b = colorsys.hsv_to_rgb(hue, 0.9, 0.9)
    return (int(round(r * 255)), int(round(g * 255)), int(round(b * 255)))


def _paint(raster: np.ndarray, box: BBox, value) -> None:
    H, W = raster.shape[:2]
    r0, r1 = pixel_span(box.top, box.bottom, H)
    c0, c1 = pixel_span(box.left, box.right, W)
    if r1 > r0 and c1 > c0:
        raster[r0:r1, c0:c1] = value


def _dilate(box: BBox, factor: float) -> BBox:
    cx, cy = (box.left + box.right) / 2, (box.top + box.bottom) / 2
    return BBox.from_center(cx, cy, box.width * factor, box.height * factor)


def _noisy(box: BBox, sigma: float, rng, W, H) -> Optional[BBox]:
    if sigma == 0:
        return box
    v = box.as_array() + rng.normal(0.0, sigma, 4)
    l, r = sorted((v[0], v[2]))
    t, b = sorted((v[1], v[3]))
    try:
        return clamp_box(BBox(l, t, max(r, l + 1.0), max(b, t + 1.0)), W, H)
    except DegenerateBox:
        return None


def generate(spec: ScenarioSpec) -> Scenario:
    """Constant-velocity targets, Bernoulli misses, Gaussian box noise and
    Poisson clutter. Deterministic for a given seed."""
    rng = np.random.default_rng(spec.seed)
    W, H = spec.width, spec.height
    gt: Dict[int, List[Tuple[int, BBox]]] = {}
    labels = {i + 1: ClassLabel.parse(t.class_label) for i, t in enumerate(spec.targets)}
    sizes = np.array([[t.box[2] - t.box[0], t.box[3] - t.box[1]] for t in spec.targets]) if spec.targets else np.array([[20.0, 20.0]])
    mean_size = sizes.mean(axis=0)
    offsets = [np.zeros(2) for _ in spec.targets]
    observations = []
    for k in range(spec.frames):
        rows = []
        for i, t in enumerate(spec.targets):
            if not (t.birth <= k < t.death):
                continue
            if spec.jitter > 0 and k > t.birth:
                offsets[i] = offsets[i] + rng.normal(0.0, spec.jitter, 2)
            dt = k - t.birth
            dx = t.velocity[0] * dt + offsets[i][0]
            dy = t.velocity[1] * dt + offsets[i][1]
            l, tp, r, b = t.box
            try:
                rows.append((i + 1, clamp_box(BBox(l + dx, tp + dy, r + dx, b + dy), W, H)))
            except DegenerateBox:
                pass
        gt[k] = rows

        dropped = spec.dropout_every > 0 and k % spec.dropout_every == spec.dropout_every - 1
        dets = []
        for gid, box in rows:
            # the miss draw happens even on dropout frames to keep streams aligned
            missed = rng.random() < spec.miss
            if missed or dropped:
                continue
            nb = _noisy(box, spec.noise, rng, W, H)
            if nb is not None:
                dets.append(Detection(k, labels[gid], nb, 1.0))
        for _ in range(rng.poisson(spec.clutter) if spec.clutter > 0 else 0):
            cw, ch = mean_size * rng.uniform(0.5, 1.5, 2)
            cx, cy = rng.uniform(0, W), rng.uniform(0, H)
            try:
                box = clamp_box(BBox.from_center(cx, cy, cw, ch), W, H)
            except DegenerateBox:
                continue
            dets.append(Detection(k, ClassLabel.OTHER, box, float(rng.uniform(0.3, 1.0))))

        attention = None
        if spec.attention != "none":
            grid = np.zeros((H, W))
            for _, box in rows:
                _paint(grid, _dilate(box, 1.1) if spec.attention == "dilated" else box, 1.0)
            attention = AttentionGrid(grid, AttentionKind.OBJECTNESS)
        image = None
        if spec.render:
            image = np.full((H, W, 3), BACKGROUND, dtype=np.uint8)
            for gid, box in rows:
                _paint(image, box, target_color(gid))
        observations.append(FrameObservation(k, dets, attention, image))
    return Scenario(spec, gt, observations, labels)


def write_scenario(scenario: Scenario, out_dir, name: str = "synth") -> Path:
    """Write CSVs, PGM attention maps, PNG frames and a manifest; return the manifest path."""
    from .ingest import SequenceManifest, grid_to_pixels, save_image, write_detections, write_ground_truth, write_manifest, write_pgm, FRAME_NAME

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    det_path = out / "detections.csv"
    gt_path = out / "gt.csv"
    write_detections(scenario.observations, det_path)
    write_ground_truth(scenario.ground_truth, gt_path, scenario.labels)
    att_dir = img_dir = None
    if scenario.spec.attention != "none":
        att_dir = out / "attention"
        att_dir.mkdir(exist_ok=True)
    if scenario.spec.render:
        img_dir = out / "images"
        img_dir.mkdir(exist_ok=True)
    for o in scenario.observations:
        name_k = FRAME_NAME.format(o.frame_index)
        if att_dir is not None and o.attention is not None:
            write_pgm(att_dir / f"{name_k}.pgm", grid_to_pixels(o.attention))
        if img_dir is not None and o.image is not None:
            save_image(img_dir / f"{name_k}.png", o.image)
    (out / "scenario.json").write_text(scenario.spec.to_json() + "\n", encoding="utf-8")
    manifest = SequenceManifest(
        sequence=name,
        frames=scenario.spec.frames,
        detections=det_path,
        images=img_dir,
        attention=att_dir,
        ground_truth=gt_path,
    )
    mpath = out / "manifest.txt"
    write_manifest(manifest, mpath)
    return mpath
