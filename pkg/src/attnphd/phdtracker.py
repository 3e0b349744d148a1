"""Modified sequential Monte Carlo PHD tracker.

Each live track owns a particle set approximating its share of the PHD
intensity plus a constant-velocity Kalman filter over (cx, cy, w, h). Per
frame the tracker

1. predicts particles along the Kalman velocity and reweights them by overlap,
   appearance and attention, taking the heaviest particle as the prediction;
2. checks the prediction against the attention map (keep / correct / reject);
3. associates predictions with detections (see :mod:`attnphd.association`);
4. updates weights, applies the Kalman correction and pulls particles toward
   the measurement with the Kalman gain;
5. resamples with residual resampling, pushing offspring along the heading;
6. births fresh multi-peak particle sets for unmatched detections.

The PHD mass of a set (sum of weights) is 1 after a measurement update and
decays by the survival factor on each miss, so the total mass is the expected
number of targets.
"""
from __future__ import annotations

import enum
import itertools
import logging
import math
from dataclasses import dataclass, field, fields, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from .appearance import FrameHistograms, TemporalHistogram, bhattacharyya, temporal_update
from .association import Track, build_cost, hungarian, lifecycle_step
from .errors import ConfigError, DimensionMismatch, FrameOrderError, MissingImage, SingularInnovation, ZeroMass
from .model import AttentionGrid, BBox, Detection, FrameObservation, TrackRecord, iou_many, pixel_span

log = logging.getLogger(__name__)


@dataclass
class TrackerConfig:
    particles: int = 100
    survival: float = 0.95
    lambda_iou: float = 4.0
    # prediction score blend: overlap / appearance / attention
    weight_iou: float = 0.4
    weight_appearance: float = 0.3
    weight_attention: float = 0.3
    # birth: positional sigma as a fraction of the box diagonal, size sigma as a
    # fraction of each dimension, side peaks offset by a fraction of box size
    birth_sigma_pos: float = 0.1
    birth_sigma_size: float = 0.05
    birth_peak_offset: float = 0.5
    # directional resampling
    quota_dominant: float = 0.5
    quota_secondary: float = 0.2
    quota_other: float = 0.15
    step_fraction: float = 0.25
    min_step: float = 1.0
    # Kalman model
    process_noise_pos: float = 1.0
    process_noise_vel: float = 0.1
    measurement_noise: float = 2.0
    init_velocity_sigma: float = 10.0
    # attention refinement
    tau_bin: float = 0.4
    occupancy: float = 0.3
    refine_window: float = 1.5
    refine_size_tolerance: float = 0.2
    refine: bool = True
    use_attention: bool = True
    # association
    cost_iou_weight: float = 0.5
    gate: float = 0.8
    max_misses: int = 2
    hist_alpha: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.particles < 1:
            raise ConfigError("particles must be >= 1")
        if not 0.0 <= self.survival <= 1.0:
            raise ConfigError("survival must be in [0, 1]")
        if min(self.weight_iou, self.weight_appearance, self.weight_attention) < 0:
            raise ConfigError("blend weights must be non-negative")
        q = self.quota_dominant + self.quota_secondary + 2 * self.quota_other
        if abs(q - 1.0) > 1e-9:
            raise ConfigError(f"resampling quotas must sum to 1, got {q}")
        if self.max_misses < 1:
            raise ConfigError("max_misses must be >= 1")


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_config(text: str, base: Optional[TrackerConfig] = None) -> TrackerConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    types = {f.name: f.type for f in fields(TrackerConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        kind = types[key]
        try:
            if kind == "bool":
                low = val.lower()
                if low not in _TRUE | _FALSE:
                    raise ValueError(val)
                values[key] = low in _TRUE
            elif kind == "int":
                values[key] = int(val)
            else:
                values[key] = float(val)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value {val!r} for {key}") from None
    return replace(base or TrackerConfig(), **values)


def load_config(path, base: Optional[TrackerConfig] = None) -> TrackerConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), base)


def dump_config(cfg: TrackerConfig) -> str:
    return "".join(f"{f.name} = {getattr(cfg, f.name)}\n" for f in fields(cfg))


# -- Kalman filter -------------------------------------------------------------

@dataclass
class KalmanState:
    mean: np.ndarray
    covariance: np.ndarray

    @property
    def box(self) -> BBox:
        cx, cy, w, h = self.mean[:4]
        return BBox.from_center(cx, cy, max(w, 1e-3), max(h, 1e-3))

    @property
    def velocity(self) -> np.ndarray:
        return self.mean[4:8]


def _cwh(box) -> np.ndarray:
    l, t, r, b = box.as_tuple() if isinstance(box, BBox) else box
    return np.array([(l + r) / 2, (t + b) / 2, r - l, b - t])


_H8 = np.hstack([np.eye(4), np.zeros((4, 4))])


def kalman_init(box: BBox, cfg: TrackerConfig) -> KalmanState:
    mean = np.concatenate([_cwh(box), np.zeros(4)])
    var = [cfg.measurement_noise ** 2] * 4 + [cfg.init_velocity_sigma ** 2] * 4
    return KalmanState(mean, np.diag(var))


def transition_matrix(dim: int = 8) -> np.ndarray:
    half = dim // 2
    F = np.eye(dim)
    F[:half, half:] = np.eye(half)
    return F


def kalman_predict(k: KalmanState, cfg: TrackerConfig) -> KalmanState:
    F = transition_matrix(8)
    Q = np.diag([cfg.process_noise_pos ** 2] * 4 + [cfg.process_noise_vel ** 2] * 4)
    P = F @ k.covariance @ F.T + Q
    return KalmanState(F @ k.mean, 0.5 * (P + P.T))


def kalman_gain(k: KalmanState, noise, H=None) -> np.ndarray:
    H = _H8 if H is None else np.atleast_2d(H)
    m = H.shape[0]
    R = np.diag(np.full(m, float(noise) ** 2)) if np.isscalar(noise) else np.atleast_2d(noise)
    S = H @ k.covariance @ H.T + R
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) > 1e14:
        raise SingularInnovation("innovation covariance is numerically singular")
    return np.linalg.solve(S, H @ k.covariance).T


def kalman_correct(k: KalmanState, z, noise=2.0, H=None) -> KalmanState:
    """Standard gain update with the Joseph covariance form.

    ``z`` is a box (measured as cx, cy, w, h) or a raw measurement vector when
    ``H`` is given. ``noise`` is a measurement standard deviation or a full
    covariance matrix.
    """
    H = _H8 if H is None else np.atleast_2d(H)
    zv = _cwh(z) if isinstance(z, BBox) else np.atleast_1d(np.asarray(z, dtype=float))
    m = H.shape[0]
    R = np.diag(np.full(m, float(noise) ** 2)) if np.isscalar(noise) else np.atleast_2d(noise)
    K = kalman_gain(k, R, H)
    mean = k.mean + K @ (zv - H @ k.mean)
    IKH = np.eye(len(k.mean)) - K @ H
    P = IKH @ k.covariance @ IKH.T + K @ R @ K.T
    return KalmanState(mean, 0.5 * (P + P.T))


# -- particles -----------------------------------------------------------------

@dataclass(frozen=True)
class Particle:
    state: BBox
    weight: float


@dataclass(eq=False)
class ParticleSet:
    """``states`` is an (N, 4) corner array, ``weights`` an (N,) array."""

    states: np.ndarray
    weights: np.ndarray
    owner_track: Optional[int] = None
    parents: Optional[np.ndarray] = None  # set by resampling

    def __len__(self):
        return len(self.weights)

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def particles(self) -> List[Particle]:
        return [Particle(BBox.from_array(s), float(w)) for s, w in zip(self.states, self.weights)]


def _corners(cwh: np.ndarray) -> np.ndarray:
    cx, cy, w, h = cwh.T
    return np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=1)


def _centers(states: np.ndarray) -> np.ndarray:
    l, t, r, b = states.T
    return np.stack([(l + r) / 2, (t + b) / 2, r - l, b - t], axis=1)


MIN_SIZE = 1.0


def birth(
    detection: Detection,
    n: int,
    sigma_pos: float,
    sigma_size: float,
    rng: np.random.Generator,
    peak_offset: float = 0.5,
    owner: Optional[int] = None,
) -> ParticleSet:
    """Multi-peak Gaussian birth around a detection.

    Centres come from an equal mixture of five Gaussians: one at the box centre
    and one offset by ``peak_offset`` box-widths/heights in each of the four
    axis directions. ``sigma_pos`` is relative to the box diagonal and
    ``sigma_size`` relative to each dimension. Weights are uniform on (0, 1]
    then normalised.
    """
    if n < 1:
        raise ValueError("need at least one particle")
    cx, cy, w, h = _cwh(detection.bbox)
    diag = math.hypot(w, h)
    peaks = np.array([[0, 0], [1, 0], [-1, 0], [0, 1], [0, -1]], dtype=float)
    peaks *= peak_offset * np.array([w, h])
    which = rng.integers(0, len(peaks), size=n)
    centres = np.array([cx, cy]) + peaks[which] + rng.normal(0.0, 1.0, (n, 2)) * sigma_pos * diag
    sizes = np.array([w, h]) * (1.0 + rng.normal(0.0, 1.0, (n, 2)) * sigma_size)
    sizes = np.maximum(sizes, MIN_SIZE)
    weights = 1.0 - rng.random(n)  # (0, 1]
    states = _corners(np.column_stack([centres, sizes]))
    if sigma_pos == 0 and peak_offset == 0 and sigma_size == 0:
        # exact copies, free of centre/size round-off
        states[:] = detection.bbox.as_array()
    return ParticleSet(states, weights / weights.sum(), owner)


class _Integral:
    """Summed-area table for box means of an attention map."""

    def __init__(self, grid: AttentionGrid):
        self.h, self.w = grid.height, grid.width
        self.sat = grid.integral()

    def box_means(self, states: np.ndarray) -> np.ndarray:
        c0 = np.clip(np.ceil(states[:, 0] - 0.5), 0, self.w).astype(int)
        r0 = np.clip(np.ceil(states[:, 1] - 0.5), 0, self.h).astype(int)
        c1 = np.clip(np.ceil(states[:, 2] - 0.5), 0, self.w).astype(int)
        r1 = np.clip(np.ceil(states[:, 3] - 0.5), 0, self.h).astype(int)
        c1 = np.maximum(c1, c0)
        r1 = np.maximum(r1, r0)
        s = self.sat
        total = s[r1, c1] - s[r0, c1] - s[r1, c0] + s[r0, c0]
        count = (r1 - r0) * (c1 - c0)
        out = np.zeros(len(states))
        ok = count > 0
        out[ok] = total[ok] / count[ok]
        return out


def prediction_scores(
    states: np.ndarray,
    last_box: BBox,
    temporal: Optional[TemporalHistogram],
    frame_hist: Optional[FrameHistograms],
    attention: Optional[AttentionGrid],
    cfg: TrackerConfig,
) -> np.ndarray:
    """Blend of overlap, appearance similarity and attention mass per particle.

    Terms whose input is missing drop out and the remaining blend weights are
    rescaled to sum to one.
    """
    terms, weights = [], []
    terms.append(iou_many(last_box, states))
    weights.append(cfg.weight_iou)
    if frame_hist is not None and temporal is not None and cfg.weight_appearance > 0:
        sim = np.zeros(len(states))
        cache = {}
        for i, s in enumerate(states):
            key = tuple(np.ceil(s - 0.5).astype(int))
            if key not in cache:
                hist = frame_hist.histogram_or_none(s)
                cache[key] = 0.0 if hist is None else 1.0 - bhattacharyya(temporal, hist)
            sim[i] = cache[key]
        terms.append(sim)
        weights.append(cfg.weight_appearance)
    if attention is not None and cfg.weight_attention > 0:
        terms.append(_Integral(attention).box_means(states))
        weights.append(cfg.weight_attention)
    weights = np.array(weights)
    if weights.sum() <= 0:
        return np.ones(len(states))
    weights /= weights.sum()
    return np.tensordot(weights, np.array(terms), axes=1)


def predict(
    p: ParticleSet,
    track: Track,
    attention: Optional[AttentionGrid] = None,
    image=None,
    cfg: Optional[TrackerConfig] = None,
    velocity=None,
    require_image: bool = False,
):
    """Move particles along the velocity and reweight them.

    Returns ``(particle_set, predicted_box)``; the predicted box is the
    heaviest particle, lowest index on ties. Reweighting keeps the set's mass.
    ``velocity`` defaults to the track's Kalman velocity (vx, vy, vw, vh).
    """
    cfg = cfg or TrackerConfig()
    if image is None and require_image and cfg.weight_appearance > 0:
        raise MissingImage("appearance term requested without an image")
    if velocity is None:
        velocity = track.kalman.velocity if track.kalman is not None else np.zeros(4)
    v = np.asarray(velocity, dtype=float)
    cwh = _centers(p.states) + v
    cwh[:, 2:] = np.maximum(cwh[:, 2:], MIN_SIZE)
    states = _corners(cwh)
    frame_hist = image
    if image is not None and not isinstance(image, FrameHistograms):
        frame_hist = FrameHistograms(image)
    scores = prediction_scores(states, track.last_box, track.temporal_histogram, frame_hist, attention, cfg)
    mass = p.mass
    w = p.weights * np.maximum(scores, 1e-12)
    if w.sum() > 0:
        w *= mass / w.sum()
    best = int(np.argmax(w))
    return ParticleSet(states, w, p.owner_track), BBox.from_array(states[best])


def update(p: ParticleSet, z: Optional[BBox], lambda_iou: float = 4.0, survival: float = 0.95) -> ParticleSet:
    """Measurement update. A missed frame only scales mass by ``survival``."""
    if z is None:
        return ParticleSet(p.states.copy(), p.weights * survival, p.owner_track)
    like = np.exp(-lambda_iou * (1.0 - iou_many(z, p.states)))
    w = p.weights * like
    total = w.sum()
    if not total > 0:
        raise ZeroMass("all particle weights vanished in the update")
    return ParticleSet(p.states.copy(), w / total, p.owner_track)


def kalman_guide(p: ParticleSet, gain: np.ndarray, z: BBox) -> ParticleSet:
    """Pull every particle toward the measurement by the Kalman gain."""
    G = gain[:4, :4]
    cwh = _centers(p.states)
    cwh = cwh + (_cwh(z) - cwh) @ G.T
    cwh[:, 2:] = np.maximum(cwh[:, 2:], MIN_SIZE)
    return ParticleSet(_corners(cwh), p.weights.copy(), p.owner_track)


# -- resampling ----------------------------------------------------------------

class Heading(str, enum.Enum):
    N = "N"
    S = "S"
    E = "E"
    W = "W"


# image coordinates: y grows downward
STEP = {Heading.N: (0.0, -1.0), Heading.S: (0.0, 1.0), Heading.E: (1.0, 0.0), Heading.W: (-1.0, 0.0)}


@dataclass(frozen=True)
class MotionEstimate:
    dx: float = 0.0
    dy: float = 0.0

    @property
    def speed(self) -> float:
        return math.hypot(self.dx, self.dy)

    @property
    def heading(self) -> Heading:
        if abs(self.dx) >= abs(self.dy):
            return Heading.E if self.dx >= 0 else Heading.W
        return Heading.S if self.dy >= 0 else Heading.N

    @property
    def secondary(self) -> Heading:
        if abs(self.dx) >= abs(self.dy):
            return Heading.S if self.dy >= 0 else Heading.N
        return Heading.E if self.dx >= 0 else Heading.W

    @property
    def split(self) -> tuple:
        """Share of the speed along the dominant and secondary axes."""
        s = abs(self.dx) + abs(self.dy)
        if s == 0:
            return (0.0, 0.0)
        a, b = sorted((abs(self.dx), abs(self.dy)), reverse=True)
        return (a / s, b / s)


def direction_quotas(motion: MotionEstimate, cfg: TrackerConfig) -> Dict[Heading, float]:
    if motion.speed == 0:
        return {h: 0.25 for h in Heading}
    q = {h: cfg.quota_other for h in Heading}
    q[motion.heading] = cfg.quota_dominant
    q[motion.secondary] = cfg.quota_secondary
    return q


def _apportion(quotas: Dict[Heading, float], n: int) -> Dict[Heading, int]:
    # largest remainder; ties resolved by quota order (dominant first)
    order = sorted(quotas, key=lambda h: -quotas[h])
    raw = {h: quotas[h] * n for h in order}
    counts = {h: int(math.floor(raw[h])) for h in order}
    left = n - sum(counts.values())
    for h in sorted(order, key=lambda h: -(raw[h] - counts[h]))[:left]:
        counts[h] += 1
    return counts


def residual_counts(weights: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Offspring counts: floor(n * w_i) deterministically, the rest multinomial."""
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if not total > 0 or not np.isfinite(total):
        raise ZeroMass("cannot resample a set with zero mass")
    scaled = n * w / total
    counts = np.floor(scaled).astype(np.int64)
    left = n - int(counts.sum())
    if left > 0:
        resid = scaled - counts
        resid = np.clip(resid, 0, None)
        if resid.sum() > 0:
            counts += rng.multinomial(left, resid / resid.sum())
        else:
            counts[np.argmax(w)] += left
    return counts


def residual_resample(
    p: ParticleSet,
    motion: MotionEstimate,
    rng: np.random.Generator,
    cfg: Optional[TrackerConfig] = None,
    n: Optional[int] = None,
) -> ParticleSet:
    """Residual resampling followed by a directional nudge.

    Each offspring is displaced by one step toward N, S, E or W, with most of
    them sent along the motion heading. Output weights are uniform and carry
    the input set's total mass.
    """
    cfg = cfg or TrackerConfig()
    n = n or cfg.particles
    counts = residual_counts(p.weights, n, rng)
    parents = np.repeat(np.arange(len(p.weights)), counts)
    states = p.states[parents].copy()
    alloc = _apportion(direction_quotas(motion, cfg), n)
    dirs = np.concatenate([np.full(alloc[h], i) for i, h in enumerate(Heading)]).astype(int)
    rng.shuffle(dirs)
    step = max(cfg.min_step, cfg.step_fraction * motion.speed)
    delta = np.array([STEP[h] for h in Heading])[dirs] * step
    states[:, [0, 2]] += delta[:, :1]
    states[:, [1, 3]] += delta[:, 1:]
    mass = p.mass
    return ParticleSet(states, np.full(n, mass / n), p.owner_track, parents)


# -- attention refinement ------------------------------------------------------

class RefineKind(str, enum.Enum):
    KEEP = "keep"
    CORRECTED = "corrected"
    REJECT = "reject"


@dataclass(frozen=True)
class RefineOutcome:
    kind: RefineKind
    box: Optional[BBox]
    occupancy: float


def occupancy(box: BBox, m: AttentionGrid, tau_bin: float = 0.4) -> float:
    """Share of the box's pixels whose attention is at least ``tau_bin``.

    Pixels of the box outside the map count as inactive.
    """
    total = (math.ceil(box.right - 0.5) - math.ceil(box.left - 0.5)) * (
        math.ceil(box.bottom - 0.5) - math.ceil(box.top - 0.5)
    )
    if total <= 0:
        return 0.0
    r0, r1 = pixel_span(box.top, box.bottom, m.height)
    c0, c1 = pixel_span(box.left, box.right, m.width)
    if r1 <= r0 or c1 <= c0:
        return 0.0
    active = int(np.count_nonzero(m.values[r0:r1, c0:c1] >= tau_bin))
    return active / total


def attention_refine(
    predicted: BBox,
    m: AttentionGrid,
    tau_bin: float = 0.4,
    min_occupancy: float = 0.3,
    window: float = 1.5,
    size_tolerance: float = 0.2,
    frame_size=None,
) -> RefineOutcome:
    """Keep, correct or reject a predicted box by its attention occupancy.

    Occupancy at or above ``min_occupancy`` keeps the prediction. A smaller
    but nonzero occupancy re-centres the box on the active pixels found in a
    ``window``-times enlarged search area, with width and height held within
    ``size_tolerance`` of the prediction. Zero occupancy rejects it.
    """
    if frame_size is not None and tuple(frame_size) != (m.width, m.height):
        raise DimensionMismatch(
            f"attention map {m.width}x{m.height} does not match frame {frame_size[0]}x{frame_size[1]}"
        )
    occ = occupancy(predicted, m, tau_bin)
    if occ + 1e-12 >= min_occupancy:
        return RefineOutcome(RefineKind.KEEP, predicted, occ)
    if occ <= 0.0:
        return RefineOutcome(RefineKind.REJECT, None, occ)
    cx, cy = (predicted.left + predicted.right) / 2, (predicted.top + predicted.bottom) / 2
    pw, ph = predicted.width, predicted.height
    sw, sh = pw * window, ph * window
    r0, r1 = pixel_span(cy - sh / 2, cy + sh / 2, m.height)
    c0, c1 = pixel_span(cx - sw / 2, cx + sw / 2, m.width)
    rows, cols = np.nonzero(m.values[r0:r1, c0:c1] >= tau_bin)
    left, right = c0 + cols.min(), c0 + cols.max() + 1.0
    top, bottom = r0 + rows.min(), r0 + rows.max() + 1.0
    ncx, ncy = (left + right) / 2, (top + bottom) / 2
    nw = min(max(right - left, (1 - size_tolerance) * pw), (1 + size_tolerance) * pw)
    nh = min(max(bottom - top, (1 - size_tolerance) * ph), (1 + size_tolerance) * ph)
    return RefineOutcome(RefineKind.CORRECTED, BBox.from_center(ncx, ncy, nw, nh), occ)


def phd_cardinality(sets: Sequence[ParticleSet]) -> float:
    """Total PHD mass, i.e. the expected number of targets."""
    return float(sum(s.weights.sum() for s in sets))


# -- tracker -------------------------------------------------------------------

@dataclass
class FrameResult:
    frame_index: int
    records: List[TrackRecord]
    terminated: List[int] = field(default_factory=list)
    born: List[int] = field(default_factory=list)
    refine: Dict[int, RefineKind] = field(default_factory=dict)
    predicted: Dict[int, BBox] = field(default_factory=dict)  # heaviest particle per track


class PHDTracker:
    """Tracker for one sequence. Not shared between sequences."""

    def __init__(self, cfg: Optional[TrackerConfig] = None):
        self.cfg = cfg or TrackerConfig()
        self.rng = np.random.default_rng(self.cfg.seed)
        self.tracks: List[Track] = []
        self.terminated: List[Track] = []
        self._ids = itertools.count(1)
        self._last_frame: Optional[int] = None

    @property
    def particle_sets(self) -> List[ParticleSet]:
        return [t.particles for t in self.tracks]

    def cardinality(self) -> float:
        return phd_cardinality(self.particle_sets)

    def _birth(self, trk: Track, det: Detection, frame_hist) -> None:
        cfg = self.cfg
        trk.particles = birth(
            det, cfg.particles, cfg.birth_sigma_pos, cfg.birth_sigma_size,
            self.rng, cfg.birth_peak_offset, owner=trk.track_id,
        )
        trk.kalman = kalman_init(det.bbox, cfg)
        if frame_hist is not None:
            hist = frame_hist.histogram_or_none(det.bbox.as_tuple())
            if hist is not None:
                trk.temporal_histogram = TemporalHistogram(hist, 1)

    def step_frame(self, obs: FrameObservation) -> FrameResult:
        cfg = self.cfg
        if self._last_frame is not None and obs.frame_index != self._last_frame + 1:
            raise FrameOrderError(f"expected frame {self._last_frame + 1}, got {obs.frame_index}")
        self._last_frame = obs.frame_index
        k = obs.frame_index

        attention = obs.attention if cfg.use_attention else None
        frame_hist = FrameHistograms(obs.image) if obs.image is not None else None
        frame_size = None
        if obs.image is not None:
            frame_size = (obs.image.shape[1], obs.image.shape[0])

        outcomes: Dict[int, RefineOutcome] = {}
        predicted: Dict[int, BBox] = {}
        for trk in self.tracks:
            trk.kalman = kalman_predict(trk.kalman, cfg)
            trk.particles, pbox = predict(trk.particles, trk, attention, frame_hist, cfg)
            predicted[trk.track_id] = pbox
            if attention is not None and cfg.refine:
                out = attention_refine(
                    pbox, attention, cfg.tau_bin, cfg.occupancy,
                    cfg.refine_window, cfg.refine_size_tolerance, frame_size,
                )
            else:
                out = RefineOutcome(RefineKind.KEEP, pbox, 1.0)
            outcomes[trk.track_id] = out
            trk.predicted_box = out.box if out.box is not None else trk.kalman.box

        dets = list(obs.detections)
        costs = build_cost(self.tracks, dets, frame_hist, cfg.cost_iou_weight)
        assignment = hungarian(costs, cfg.gate)
        res = lifecycle_step(self.tracks, assignment, dets, k, self._ids, cfg.max_misses)

        records = []
        for trk, det in res.matched:
            trk.particles = update(trk.particles, det.bbox, cfg.lambda_iou, cfg.survival)
            gain = kalman_gain(trk.kalman, cfg.measurement_noise)
            trk.kalman = kalman_correct(trk.kalman, det.bbox, cfg.measurement_noise)
            trk.particles = kalman_guide(trk.particles, gain, det.bbox)
            trk.score = det.score
            if frame_hist is not None:
                hist = frame_hist.histogram_or_none(det.bbox.as_tuple())
                if hist is not None:
                    if trk.temporal_histogram is None:
                        trk.temporal_histogram = TemporalHistogram(hist, 1)
                    else:
                        trk.temporal_histogram = temporal_update(trk.temporal_histogram, hist, cfg.hist_alpha)
            records.append(TrackRecord(k, trk.track_id, trk.class_label, det.bbox, round(trk.particles.mass, 6)))

        for trk in res.missed:
            trk.particles = update(trk.particles, None, cfg.lambda_iou, cfg.survival)
            out = outcomes[trk.track_id]
            if out.kind == RefineKind.CORRECTED:
                trk.kalman = kalman_correct(trk.kalman, out.box, cfg.measurement_noise)
            if out.kind != RefineKind.REJECT:
                trk.last_box = out.box
                trk.history.append((k, out.box))
                records.append(TrackRecord(k, trk.track_id, trk.class_label, out.box, round(trk.particles.mass, 6)))

        for trk in [t for t, _ in res.matched] + res.missed:
            vx, vy = trk.kalman.velocity[:2]
            trk.particles = residual_resample(trk.particles, MotionEstimate(float(vx), float(vy)), self.rng, cfg)

        born_dets = {id(t): dets[j] for t, j in zip(res.born, assignment.unmatched_detections)}
        for trk in res.born:
            det = born_dets[id(trk)]
            self._birth(trk, det, frame_hist)
            records.append(TrackRecord(k, trk.track_id, trk.class_label, det.bbox, det.score))

        for trk in self.tracks + res.born:
            trk.predicted_box = None
        self.terminated.extend(res.terminated)
        self.tracks = res.live
        records.sort(key=lambda r: r.track_id)
        if res.terminated:
            log.debug("frame %d: terminated %s", k, [t.track_id for t in res.terminated])
        return FrameResult(
            k, records,
            terminated=[t.track_id for t in res.terminated],
            born=[t.track_id for t in res.born],
            refine={tid: o.kind for tid, o in outcomes.items()},
            predicted=predicted,
        )

    def run(self, observations: Sequence[FrameObservation]) -> List[FrameResult]:
        return [self.step_frame(o) for o in observations]
