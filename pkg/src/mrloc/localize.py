"""Peak-region segmentation, retention and sub-pixel localization.

``localize_frame`` runs h-dome extraction, labels the dome support, keeps the
regions whose dome height is close to the frame's highest, and localizes each
one at the peak of its PSF-convolved neighbourhood. ``threshold_baseline`` is
the plain intensity-threshold detector used for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .grid import Frame
from .morphology import DomeImage, MarkerMode, hdome
from .preprocess import gaussian_kernel1d

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class LocalizeConfig:
    h: float = 0.05
    retention_fraction: float = 0.10
    region_floor: float = 0.5
    psf_sigma: float = 30e-6
    baseline_threshold: float = 0.90
    mode: str = "subtractive"
    connectivity: int = 8

    def __post_init__(self):
        for name in ("h", "retention_fraction", "region_floor", "baseline_threshold"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{name} must be in (0, 1), got {v}")
        if not self.psf_sigma > 0:
            raise ConfigError(f"psf_sigma must be positive, got {self.psf_sigma}")
        if self.connectivity not in (4, 8):
            raise ConfigError(f"connectivity must be 4 or 8, got {self.connectivity}")
        MarkerMode.parse(self.mode)


@dataclass(frozen=True, eq=False)
class PeakRegion:
    rows: np.ndarray
    cols: np.ndarray
    area_px: int
    area_wavelengths2: float
    peak_value: float
    centroid: tuple[float, float]
    orientation_rad: float

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        """Inclusive ``(r0, r1, c0, c1)``."""
        return (int(self.rows.min()), int(self.rows.max()), int(self.cols.min()), int(self.cols.max()))


@dataclass(frozen=True)
class Localization:
    frame_index: int
    y: float
    x: float
    amplitude: float
    region_area_wl2: float
    orientation_rad: float = 0.0


def _region_from_pixels(rows, cols, weights, geometry) -> PeakRegion:
    wsum = float(weights.sum())
    ym = rows * geometry.dy
    xm = cols * geometry.dx
    if wsum > 0:
        cy = float((weights * ym).sum() / wsum)
        cx = float((weights * xm).sum() / wsum)
        myy = float((weights * (ym - cy) ** 2).sum() / wsum)
        mxx = float((weights * (xm - cx) ** 2).sum() / wsum)
        mxy = float((weights * (ym - cy) * (xm - cx)).sum() / wsum)
    else:
        cy, cx = float(ym.mean()), float(xm.mean())
        myy = mxx = mxy = 0.0
    # principal axis angle from +x towards +y, in (-pi/2, pi/2]
    theta = 0.5 * np.arctan2(2.0 * mxy, mxx - myy)
    if theta <= -np.pi / 2:
        theta += np.pi
    area = int(rows.size)
    return PeakRegion(
        rows=rows,
        cols=cols,
        area_px=area,
        area_wavelengths2=area * geometry.pixel_area / geometry.wavelength**2,
        peak_value=float(weights.max()),
        centroid=(cy, cx),
        orientation_rad=float(theta),
    )


def _label_regions(support: np.ndarray, values: np.ndarray, geometry) -> list[PeakRegion]:
    labels, n = ndimage.label(support, structure=_EIGHT)
    if n == 0:
        return []
    regions = []
    for idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        sub = labels[sl] == idx
        rr, cc = np.nonzero(sub)
        rows = rr + sl[0].start
        cols = cc + sl[1].start
        regions.append(_region_from_pixels(rows, cols, values[sl][sub], geometry))
    regions.sort(key=lambda reg: (int(reg.rows.min()), int(reg.cols.min())))
    return regions


def segment_regions(dome: DomeImage, cfg: LocalizeConfig = LocalizeConfig()) -> list[PeakRegion]:
    """Label the 8-connected support of the dome image.

    Dome values below ``cfg.region_floor * h`` are dropped first. Region
    statistics are weighted by dome height; regions are ordered by their
    first row, then first column.
    """
    p = dome.data
    support = p >= cfg.region_floor * dome.h
    support &= p > 0
    return _label_regions(support, p, dome.geometry)


def retain_peaks(regions: list[PeakRegion], cfg: LocalizeConfig = LocalizeConfig()) -> list[PeakRegion]:
    """Keep regions whose peak is within ``retention_fraction`` of the highest."""
    if not regions:
        return []
    top = max(r.peak_value for r in regions)
    cut = (1.0 - cfg.retention_fraction) * top
    return [r for r in regions if r.peak_value >= cut]


def _parabolic_offset(left: float, mid: float, right: float) -> float:
    denom = left - 2.0 * mid + right
    if denom >= 0.0:
        return 0.0
    off = 0.5 * (left - right) / denom
    return float(min(0.5, max(-0.5, off)))


def superlocalize(region: PeakRegion, frame: Frame, cfg: LocalizeConfig = LocalizeConfig(),
                  frame_index: int = 0) -> Localization:
    """Localize one region at the peak of its PSF-convolved neighbourhood.

    The frame is cropped to the region's bounding box padded by three PSF
    sigmas, convolved with a unit-sum Gaussian PSF, and the maximum over the
    region's pixels is refined per axis with a three-point parabola.
    """
    g = frame.geometry
    if region.area_px == 1:
        r, c = int(region.rows[0]), int(region.cols[0])
        return Localization(frame_index, r * g.dy, c * g.dx, region.peak_value,
                            region.area_wavelengths2, region.orientation_rad)

    sy = cfg.psf_sigma / g.dy
    sx = cfg.psf_sigma / g.dx
    py = int(np.ceil(3.0 * sy))
    px = int(np.ceil(3.0 * sx))
    r0, r1, c0, c1 = region.bbox
    a0, a1 = max(r0 - py, 0), min(r1 + py, g.ny - 1)
    b0, b1 = max(c0 - px, 0), min(c1 + px, g.nx - 1)
    crop = np.asarray(frame.data[a0 : a1 + 1, b0 : b1 + 1], dtype=np.float64)
    conv = ndimage.correlate1d(crop, gaussian_kernel1d(sy), axis=0, mode="nearest")
    conv = ndimage.correlate1d(conv, gaussian_kernel1d(sx), axis=1, mode="nearest")

    lr = region.rows - a0
    lc = region.cols - b0
    vals = conv[lr, lc]
    best = np.flatnonzero(vals == vals.max())
    if best.size > 1:
        # ties (flat plateaus): take the one nearest the region centroid
        cy = region.centroid[0] / g.dy - a0
        cx = region.centroid[1] / g.dx - b0
        d2 = ((lr[best] - cy) * g.dy) ** 2 + ((lc[best] - cx) * g.dx) ** 2
        best = best[np.argsort(d2, kind="stable")[:1]]
    i, j = int(lr[best[0]]), int(lc[best[0]])

    oy = ox = 0.0
    if 0 < i < conv.shape[0] - 1:
        oy = _parabolic_offset(conv[i - 1, j], conv[i, j], conv[i + 1, j])
    if 0 < j < conv.shape[1] - 1:
        ox = _parabolic_offset(conv[i, j - 1], conv[i, j], conv[i, j + 1])
    y = (a0 + i + oy) * g.dy
    x = (b0 + j + ox) * g.dx
    return Localization(frame_index, y, x, region.peak_value,
                        region.area_wavelengths2, region.orientation_rad)


def localize_frame(frame: Frame, cfg: LocalizeConfig = LocalizeConfig(), frame_index: int = 0) -> list[Localization]:
    """h-dome -> segment -> retain -> superlocalize for one preprocessed frame."""
    if not np.any(frame.data > 0):
        return []
    dome = hdome(frame, cfg.h, cfg.mode, cfg.connectivity)
    regions = retain_peaks(segment_regions(dome, cfg), cfg)
    return [superlocalize(r, frame, cfg, frame_index) for r in regions]


def baseline_regions(frame: Frame, cfg: LocalizeConfig = LocalizeConfig()) -> list[PeakRegion]:
    data = np.asarray(frame.data, dtype=np.float64)
    top = data.max()
    if not top > 0:
        return []
    support = data >= cfg.baseline_threshold * top
    return _label_regions(support, data, frame.geometry)


def threshold_baseline(frame: Frame, cfg: LocalizeConfig = LocalizeConfig(), frame_index: int = 0) -> list[Localization]:
    """Zero everything below ``baseline_threshold`` times the frame maximum,
    label what is left and localize each component."""
    return [superlocalize(r, frame, cfg, frame_index) for r in baseline_regions(frame, cfg)]
