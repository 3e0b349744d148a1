"""Hue/saturation colour histograms and Bhattacharyya distance."""
from __future__ import annotations

import colorsys
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRegion, NonNormalized
from .model import BBox, pixel_span

HUE_BINS = 50
SAT_BINS = 60
NUM_BINS = HUE_BINS + SAT_BINS
HUE_STEP = 360.0 / HUE_BINS  # 7.2 degrees
LOW_SATURATION = 0.05
DEFAULT_ALPHA = 0.3


@dataclass(frozen=True, eq=False)
class AppearanceHistogram:
    """50 hue bins followed by 60 saturation bins; each segment sums to 1."""

    bins: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bins, dtype=float)
        if b.shape != (NUM_BINS,):
            raise NonNormalized(f"expected {NUM_BINS} bins, got shape {b.shape}")
        if np.any(b < 0) or not np.all(np.isfinite(b)):
            raise NonNormalized("histogram bins must be finite and non-negative")
        if abs(b[:HUE_BINS].sum() - 1) > 1e-6 or abs(b[HUE_BINS:].sum() - 1) > 1e-6:
            raise NonNormalized("hue and saturation segments must each sum to 1")
        object.__setattr__(self, "bins", b)

    @classmethod
    def _trusted(cls, bins: np.ndarray) -> "AppearanceHistogram":
        # skips validation; callers guarantee normalised segments
        obj = object.__new__(cls)
        object.__setattr__(obj, "bins", bins)
        return obj

    @property
    def hue(self) -> np.ndarray:
        return self.bins[:HUE_BINS]

    @property
    def saturation(self) -> np.ndarray:
        return self.bins[HUE_BINS:]


@dataclass(frozen=True)
class TemporalHistogram:
    histogram: AppearanceHistogram
    sample_count: int = 1


def rgb_to_hsv(pixel) -> tuple:
    """(r, g, b) in [0, 255] to (hue degrees, saturation, value)."""
    r, g, b = (c / 255.0 for c in pixel)
    h, s, v = colorsys.rgb_to_hsv(r, g, b)
    return (h * 360.0) % 360.0, s, v


def hs_bin_indices(image: np.ndarray) -> tuple:
    """Per-pixel hue-bin and saturation-bin indices of an (H, W, 3) RGB raster.

    Vectorised hexcone conversion. Computing this once per frame lets every
    region histogram reduce to a bincount over a slice.
    """
    img = np.asarray(image)
    if not np.issubdtype(img.dtype, np.integer):
        img = np.rint(np.clip(img, 0.0, 1.0) * 255.0) if img.max(initial=0) <= 1.0 else np.rint(img)
    rgb = img.astype(np.int64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = np.maximum(np.maximum(r, g), b)
    mn = np.minimum(np.minimum(r, g), b)
    delta = mx - mn
    # hue in sextants is num / delta; exact integer floor avoids bin-edge drift
    num = np.where(
        mx == r,
        (g - b) % (6 * np.maximum(delta, 1)),
        np.where(mx == g, b - r + 2 * delta, r - g + 4 * delta),
    )
    safe = np.maximum(delta, 1)
    # bin = floor(60 * num / delta / 7.2) = floor(25 * num / (3 * delta))
    hue_idx = np.minimum((25 * num) // (3 * safe), HUE_BINS - 1)
    hue_idx[delta == 0] = 0
    # hue is numerically meaningless for near-grey pixels (s < 0.05 <=> 20 * delta < max)
    hue_idx[20 * delta < mx] = 0
    sat_idx = np.minimum((SAT_BINS * delta) // np.maximum(mx, 1), SAT_BINS - 1)
    return hue_idx, sat_idx


def _region_histogram(hue_idx, sat_idx, region: BBox) -> AppearanceHistogram:
    H, W = hue_idx.shape
    r0, r1 = pixel_span(region.top, region.bottom, H)
    c0, c1 = pixel_span(region.left, region.right, W)
    if r1 <= r0 or c1 <= c0:
        raise DegenerateRegion(f"region {region.as_tuple()} covers no pixels of a {W}x{H} image")
    hh = np.bincount(hue_idx[r0:r1, c0:c1].ravel(), minlength=HUE_BINS).astype(float)
    sh = np.bincount(sat_idx[r0:r1, c0:c1].ravel(), minlength=SAT_BINS).astype(float)
    return AppearanceHistogram(np.concatenate([hh / hh.sum(), sh / sh.sum()]))


def hs_histogram(image: np.ndarray, region: BBox) -> AppearanceHistogram:
    hue_idx, sat_idx = hs_bin_indices(image)
    return _region_histogram(hue_idx, sat_idx, region)


class FrameHistograms:
    """Caches the per-pixel bin indices of one frame."""

    def __init__(self, image: np.ndarray):
        self.hue_idx, self.sat_idx = hs_bin_indices(image)
        self.height, self.width = self.hue_idx.shape

    def histogram(self, region: BBox) -> AppearanceHistogram:
        return _region_histogram(self.hue_idx, self.sat_idx, region)

    def histogram_or_none(self, box) -> AppearanceHistogram | None:
        l, t, r, b = (float(v) for v in box)
        r0, r1 = pixel_span(t, b, self.height)
        c0, c1 = pixel_span(l, r, self.width)
        if r1 <= r0 or c1 <= c0:
            return None
        hh = np.bincount(self.hue_idx[r0:r1, c0:c1].ravel(), minlength=HUE_BINS).astype(float)
        sh = np.bincount(self.sat_idx[r0:r1, c0:c1].ravel(), minlength=SAT_BINS).astype(float)
        return AppearanceHistogram._trusted(np.concatenate([hh / hh.sum(), sh / sh.sum()]))


def _as_bins(h) -> np.ndarray:
    if isinstance(h, TemporalHistogram):
        h = h.histogram
    if isinstance(h, AppearanceHistogram):
        return h.bins
    return np.asarray(h, dtype=float)


def bhattacharyya(h1, h2) -> float:
    """Bhattacharyya distance in the usual image-histogram form.

    d = sqrt(1 - sum(sqrt(h1 * h2)) / sqrt(mean(h1) * mean(h2) * N^2))
    """
    a, b = _as_bins(h1), _as_bins(h2)
    if a.shape != b.shape or a.ndim != 1:
        raise NonNormalized(f"histogram shapes differ: {a.shape} vs {b.shape}")
    if np.any(a < 0) or np.any(b < 0):
        raise NonNormalized("negative histogram bins")
    norm = math.sqrt(a.sum() * b.sum())  # == sqrt(mean(a) * mean(b) * N^2)
    if not norm > 0:
        raise NonNormalized("empty histogram")
    coeff = float(np.sqrt(a * b).sum()) / norm
    return math.sqrt(max(0.0, 1.0 - coeff))


def _renormalize(bins: np.ndarray) -> np.ndarray:
    out = bins.copy()
    out[:HUE_BINS] /= out[:HUE_BINS].sum()
    out[HUE_BINS:] /= out[HUE_BINS:].sum()
    return out


def temporal_update(t: TemporalHistogram, new: AppearanceHistogram, alpha: float = DEFAULT_ALPHA) -> TemporalHistogram:
    """Exponential moving average of the track's appearance."""
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha {alpha} outside [0, 1]")
    if alpha == 1.0:
        bins = new.bins.copy()
    elif alpha == 0.0:
        bins = t.histogram.bins.copy()
    else:
        bins = _renormalize((1.0 - alpha) * t.histogram.bins + alpha * new.bins)
    return TemporalHistogram(AppearanceHistogram(bins), t.sample_count + 1)
