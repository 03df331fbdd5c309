"""Contrast-to-noise ratio, vessel-mask accuracy, localization upper bound and
noise injection."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError
from .grid import FrameStack, VesselMask
from .localize import Localization
from .render import sample_bilinear


def _pixels(sel, shape) -> np.ndarray:
    """Boolean pixel set from a mask, ``(rows, cols)`` or ``(r0, r1, c0, c1)`` box."""
    sel_arr = np.asarray(sel)
    if sel_arr.dtype == bool and sel_arr.shape == shape:
        return sel_arr
    out = np.zeros(shape, dtype=bool)
    if sel_arr.ndim == 1 and sel_arr.size == 4:
        r0, r1, c0, c1 = (int(v) for v in sel_arr)
        out[r0:r1, c0:c1] = True
        return out
    if sel_arr.ndim == 2 and sel_arr.shape[0] == 2:
        out[sel_arr[0], sel_arr[1]] = True
        return out
    raise DataError(f"cannot interpret pixel set of shape {sel_arr.shape}")


def cnr_linear(image, roi, bg) -> float:
    """``(mean(roi) - mean(bg)) / std(bg)`` with the sample standard deviation."""
    data = np.asarray(getattr(image, "data", image), dtype=np.float64)
    roi_px = data[_pixels(roi, data.shape)]
    bg_px = data[_pixels(bg, data.shape)]
    if roi_px.size == 0:
        raise DataError("empty ROI")
    if bg_px.size < 2:
        raise DataError("background region needs at least 2 pixels")
    sd = float(bg_px.std(ddof=1))
    if not sd > 0:
        raise DataError("background region has zero standard deviation")
    return (float(roi_px.mean()) - float(bg_px.mean())) / sd


def to_db(linear: float) -> float:
    return 20.0 * math.log10(linear) if linear > 0 else -math.inf


def cnr(image, roi, bg) -> float:
    """CNR in dB (``20*log10`` of the linear ratio); ``-inf`` when the ROI is
    not brighter than the background."""
    return to_db(cnr_linear(image, roi, bg))


@dataclass
class CNRReport:
    names: list[str]
    linear: list[float]
    db: list[float]
    background: str = "manual"
    summary: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["db"] = [v if math.isfinite(v) else None for v in self.db]
        return d


def cnr_report(image, rois: Mapping[str, object], bg, background: str = "manual") -> CNRReport:
    names = list(rois)
    lin = [cnr_linear(image, rois[k], bg) for k in names]
    db = [to_db(v) for v in lin]
    finite = np.array([v for v in db if math.isfinite(v)])
    summary = {"n": len(db), "n_nonpositive": int(sum(v <= 0 for v in lin))}
    if finite.size:
        summary.update(
            median_db=float(np.median(finite)),
            min_db=float(finite.min()),
            max_db=float(finite.max()),
            q25_db=float(np.percentile(finite, 25)),
            q75_db=float(np.percentile(finite, 75)),
        )
    return CNRReport(names, lin, db, background, summary)


@dataclass
class AccuracyReport:
    n_total: int
    tolerances: list[float]
    n_within: list[int]
    fraction_within: list[float]
    undefined: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fraction_within"] = [None if math.isnan(v) else v for v in self.fraction_within]
        return d


def sample_distance(mask: VesselMask, y: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Distance (metres) from points to the vessel mask.

    Zero when the nearest pixel is a mask pixel, otherwise the bilinearly
    interpolated distance field.
    """
    g = mask.geometry
    rows = np.clip(np.asarray(y, dtype=np.float64) / g.dy, 0, g.ny - 1)
    cols = np.clip(np.asarray(x, dtype=np.float64) / g.dx, 0, g.nx - 1)
    near = mask.bits[np.floor(rows + 0.5).astype(int).clip(0, g.ny - 1),
                     np.floor(cols + 0.5).astype(int).clip(0, g.nx - 1)]
    d = sample_bilinear(mask.distance, rows, cols)
    return np.where(near, 0.0, d)


def in_vessel_fraction(locs: Sequence[Localization], mask: VesselMask,
                       tolerances: Sequence[float] = (0.0, 20e-6, 50e-6)) -> AccuracyReport:
    """Count localizations within each tolerance of the vessel mask."""
    tolerances = [float(t) for t in tolerances]
    n = len(locs)
    if n == 0:
        return AccuracyReport(0, tolerances, [0] * len(tolerances), [math.nan] * len(tolerances), True)
    d = sample_distance(mask, np.array([l.y for l in locs]), np.array([l.x for l in locs]))
    counts = [int(np.count_nonzero(d <= t)) for t in tolerances]
    return AccuracyReport(n, tolerances, counts, [c / n for c in counts])


def upper_bound(mask: VesselMask, wavelength: float | None = None) -> float:
    """Vessel area divided by one square wavelength."""
    if wavelength is None:
        wavelength = mask.geometry.wavelength
    count = int(np.count_nonzero(mask.bits))
    if count == 0:
        raise DataError("vessel mask is empty")
    return count * mask.geometry.dy * mask.geometry.dx / wavelength**2


def add_noise(stack: FrameStack, amplitude_rel: float, seed: int = 0) -> FrameStack:
    """Add white Gaussian noise with standard deviation ``amplitude_rel``
    times the mean stack intensity, then clip at zero."""
    if amplitude_rel < 0:
        raise DataError(f"noise amplitude must be >= 0, got {amplitude_rel}")
    if amplitude_rel == 0:
        return stack
    rng = np.random.default_rng(seed)
    sd = amplitude_rel * float(stack.data.mean(dtype=np.float64))
    noisy = stack.data.astype(np.float64) + rng.normal(0.0, sd, size=stack.data.shape)
    np.maximum(noisy, 0.0, out=noisy)
    return stack.with_data(noisy.astype(stack.data.dtype))


def resolved_maxima(values, valley_ratio: float = 0.5) -> list[int]:
    """Indices of maxima of a 1-D profile that are mutually resolved.

    Two neighbouring maxima count as separate only when the lowest value
    between them is below ``valley_ratio`` times the smaller of the two.
    Otherwise the lower one is absorbed. Plateaus report their first index.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DataError("profile must be a non-empty 1-D array")
    peaks = []
    i, n = 0, v.size
    while i < n:
        j = i
        while j + 1 < n and v[j + 1] == v[i]:
            j += 1
        left_ok = i == 0 or v[i - 1] < v[i]
        right_ok = j == n - 1 or v[j + 1] < v[i]
        if left_ok and right_ok and v[i] > 0:
            peaks.append(i)
        i = j + 1
    merged = True
    while merged and len(peaks) > 1:
        merged = False
        for k in range(len(peaks) - 1):
            a, b = peaks[k], peaks[k + 1]
            valley = v[a:b + 1].min()
            if valley >= valley_ratio * min(v[a], v[b]):
                peaks.pop(k + 1 if v[a] >= v[b] else k)
                merged = True
                break
    return peaks
