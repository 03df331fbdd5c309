"""Super-resolution density images, projections, profiles and image export."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError
from .grid import Frame, FrameStack, GridGeometry
from .localize import Localization

TRUNCATE = 4.0


@dataclass(frozen=True, eq=False)
class SRImage:
    geometry: GridGeometry
    data: np.ndarray
    n_localizations: int

    def as_frame(self) -> Frame:
        return Frame(self.geometry, self.data)


def accumulate_sr(
    locs: Iterable[Localization],
    geometry: GridGeometry,
    sigma: float | None = None,
    amplitude_weighted: bool = False,
) -> SRImage:
    """Sum a unit-peak isotropic Gaussian at every localization.

    ``sigma`` defaults to a eighth of the wavelength. Each Gaussian is
    evaluated at pixel centres and cut off beyond ``4 * sigma``. Localizations
    are added in the order given, which fixes the floating-point result.
    """
    if sigma is None:
        sigma = geometry.wavelength / 8.0
    if not sigma > 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    g = geometry
    out = np.zeros(g.shape)
    ry = int(np.ceil(TRUNCATE * sigma / g.dy))
    rx = int(np.ceil(TRUNCATE * sigma / g.dx))
    cutoff2 = (TRUNCATE * sigma) ** 2
    n = 0
    for loc in locs:
        n += 1
        cy = loc.y / g.dy
        cx = loc.x / g.dx
        r0 = max(int(np.floor(cy)) - ry, 0)
        r1 = min(int(np.ceil(cy)) + ry, g.ny - 1)
        c0 = max(int(np.floor(cx)) - rx, 0)
        c1 = min(int(np.ceil(cx)) + rx, g.nx - 1)
        if r0 > r1 or c0 > c1:
            continue
        ddy = np.arange(r0, r1 + 1) * g.dy - loc.y
        ddx = np.arange(c0, c1 + 1) * g.dx - loc.x
        d2 = ddy[:, None] ** 2 + ddx[None, :] ** 2
        blob = np.exp(-0.5 * d2 / sigma**2)
        blob[d2 > cutoff2] = 0.0
        if amplitude_weighted:
            blob *= loc.amplitude
        out[r0 : r1 + 1, c0 : c1 + 1] += blob
    return SRImage(g, out, n)


def max_intensity_projection(stack: FrameStack) -> Frame:
    return Frame(stack.geometry, stack.data.max(axis=0))


def sample_bilinear(data: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Bilinear samples at fractional pixel coordinates inside the image."""
    ny, nx = data.shape
    r0 = np.clip(np.floor(rows).astype(int), 0, max(ny - 2, 0))
    c0 = np.clip(np.floor(cols).astype(int), 0, max(nx - 2, 0))
    fr = rows - r0
    fc = cols - c0
    r1 = np.minimum(r0 + 1, ny - 1)
    c1 = np.minimum(c0 + 1, nx - 1)
    return (
        data[r0, c0] * (1 - fr) * (1 - fc)
        + data[r0, c1] * (1 - fr) * fc
        + data[r1, c0] * fr * (1 - fc)
        + data[r1, c1] * fr * fc
    )


def line_profile(image, p0: Sequence[float], p1: Sequence[float], n: int = 200) -> np.ndarray:
    """Bilinear intensity profile from ``p0`` to ``p1`` (``(y, x)`` metres).

    Returns an ``(n, 2)`` array of ``(distance_m, intensity)``.
    """
    if n < 2:
        raise ConfigError(f"profile needs at least 2 samples, got {n}")
    g = image.geometry
    for p in (p0, p1):
        if not g.contains(float(p[0]), float(p[1])):
            raise ConfigError(f"profile endpoint {tuple(p)} lies outside the image")
    t = np.linspace(0.0, 1.0, n)
    ys = p0[0] + t * (p1[0] - p0[0])
    xs = p0[1] + t * (p1[1] - p0[1])
    vals = sample_bilinear(np.asarray(image.data, dtype=np.float64), ys / g.dy, xs / g.dx)
    dist = t * float(np.hypot(p1[0] - p0[0], p1[1] - p0[1]))
    return np.column_stack([dist, vals])


def write_pgm(image, path) -> None:
    """Export as 16-bit binary PGM (max-scaled) with a JSON sidecar holding
    the original range and geometry. Stored data is never clipped."""
    path = Path(path)
    data = np.asarray(image.data, dtype=np.float64)
    lo, hi = float(data.min()), float(data.max())
    if hi > lo:
        scaled = np.round((data - lo) / (hi - lo) * 65535.0)
    else:
        scaled = np.zeros_like(data)
    g = image.geometry
    with open(path, "wb") as fh:
        fh.write(f"P5\n{g.nx} {g.ny}\n65535\n".encode("ascii"))
        fh.write(scaled.astype(">u2").tobytes())
    sidecar = {"min": lo, "max": hi, "geometry": g.to_dict()}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def read_pgm(path) -> tuple[np.ndarray, dict]:
    """Read a 16-bit PGM written by :func:`write_pgm`, rescaled to the stored
    range when the sidecar exists."""
    path = Path(path)
    raw = path.read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ConfigError(f"{path} is not a binary PGM")
    nx, ny = (int(v) for v in parts[1].split())
    maxval = int(parts[2])
    pix = np.frombuffer(parts[3], dtype=">u2" if maxval > 255 else np.uint8, count=nx * ny)
    data = pix.reshape(ny, nx).astype(np.float64)
    side = path.with_suffix(".json")
    meta = json.loads(side.read_text()) if side.exists() else {}
    if meta:
        data = meta["min"] + data / maxval * (meta["max"] - meta["min"])
    return data, meta


def write_profile_csv(profile: np.ndarray, path) -> None:
    np.savetxt(path, profile, delimiter=",", header="distance_m,intensity", comments="", fmt="%.17g")
