"""Synthetic contrast-enhanced ultrasound phantoms with known ground truth.

Bubbles enter each straight vessel at its inlet as a Poisson process, move
at the vessel's flow speed and leave at the outlet. Each frame is a static
smooth clutter field plus one Gaussian PSF per bubble, optionally with white
noise. The vessel mask is rasterized on a finer grid than the frames.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .evaluate import add_noise
from .grid import FrameStack, GridGeometry, VesselMask, mask_from_image


@dataclass(frozen=True)
class VesselSpec:
    start: tuple[float, float]
    end: tuple[float, float]
    diameter: float
    speed: float = 10e-3
    density: float = 2.0
    amplitude_range: tuple[float, float] | None = None

    @property
    def length(self) -> float:
        return float(np.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1]))

    @property
    def direction(self) -> np.ndarray:
        d = np.subtract(self.end, self.start, dtype=np.float64)
        return d / np.linalg.norm(d)


@dataclass(frozen=True)
class PhantomSpec:
    """Parameters of a synthetic acquisition.

    ``density`` of a vessel is the mean number of bubbles present in it in
    any frame. ``amplitude_range`` is sampled log-uniformly; a vessel may
    override it. ``mask_factor`` sets the refinement of the vessel-mask grid
    relative to the frame grid.
    """

    geometry: GridGeometry
    vessels: tuple[VesselSpec, ...] = ()
    amplitude_range: tuple[float, float] = (0.1, 1.0)
    psf_sigma: float = 30e-6
    psf_aspect: float = 1.0
    psf_angle: float = 0.0
    clutter_amplitude: float = 1.0
    clutter_scale: float = 300e-6
    clutter_drift: float = 0.0
    noise_rel: float = 0.0
    nframes: int = 720
    seed: int = 0
    mask_factor: int = 4

    def __post_init__(self):
        lo, hi = self.amplitude_range
        if not 0 < lo <= hi:
            raise ConfigError(f"amplitude range must be positive, got {self.amplitude_range}")
        if self.nframes < 1:
            raise ConfigError("nframes must be >= 1")
        if not self.psf_sigma > 0 or not self.psf_aspect > 0:
            raise ConfigError("psf_sigma and psf_aspect must be positive")
        if self.mask_factor < 1:
            raise ConfigError("mask_factor must be >= 1")
        g = self.geometry
        for k, v in enumerate(self.vessels):
            if v.length <= 0 or v.diameter <= 0 or v.speed < 0 or v.density < 0:
                raise ConfigError(f"vessel {k}: invalid length, diameter, speed or density")
            if v.amplitude_range is not None and not 0 < v.amplitude_range[0] <= v.amplitude_range[1]:
                raise ConfigError(f"vessel {k}: amplitude range must be positive")
            r = v.diameter / 2
            for y, x in (v.start, v.end):
                if not (r <= y <= g.height - r and r <= x <= g.width - r):
                    raise ConfigError(f"vessel {k} extends outside the frame")

    def mask_geometry(self) -> GridGeometry:
        return self.geometry.upsampled(self.mask_factor, self.mask_factor)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["geometry"] = self.geometry.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        d = dict(d)
        geometry = GridGeometry.from_dict(d.pop("geometry"))
        vessels = tuple(
            VesselSpec(
                start=tuple(v["start"]),
                end=tuple(v["end"]),
                diameter=v["diameter"],
                speed=v.get("speed", 10e-3),
                density=v.get("density", 2.0),
                amplitude_range=tuple(v["amplitude_range"]) if v.get("amplitude_range") else None,
            )
            for v in d.pop("vessels", ())
        )
        if "amplitude_range" in d:
            d["amplitude_range"] = tuple(d["amplitude_range"])
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown phantom fields: {sorted(unknown)}")
        return cls(geometry=geometry, vessels=vessels, **d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "PhantomSpec":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigError(f"invalid phantom spec {path}: {exc}") from exc


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Every bubble in every frame, as flat columns sorted by frame."""

    frame: np.ndarray
    bubble_id: np.ndarray
    vessel: np.ndarray
    y: np.ndarray
    x: np.ndarray
    amplitude: np.ndarray
    vy: np.ndarray
    vx: np.ndarray
    mask: VesselMask = field(repr=False)
    nframes: int = 0

    def in_frame(self, t: int) -> np.ndarray:
        lo, hi = np.searchsorted(self.frame, [t, t + 1])
        return np.arange(lo, hi)

    def counts_per_frame(self) -> np.ndarray:
        return np.bincount(self.frame, minlength=self.nframes)

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("frame,bubble,vessel,y_m,x_m,amplitude,vy_mps,vx_mps\n")
            for k in range(self.frame.size):
                fh.write(
                    f"{int(self.frame[k])},{int(self.bubble_id[k])},{int(self.vessel[k])},"
                    f"{float(self.y[k])!r},{float(self.x[k])!r},{float(self.amplitude[k])!r},"
                    f"{float(self.vy[k])!r},{float(self.vx[k])!r}\n"
                )


def _segment_distance(py, px, a, b) -> np.ndarray:
    ay, ax = a
    by, bx = b
    vy, vx = by - ay, bx - ax
    t = ((py - ay) * vy + (px - ax) * vx) / (vy * vy + vx * vx)
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(py - (ay + t * vy), px - (ax + t * vx))


def rasterize_vessels(vessels, geometry: GridGeometry) -> np.ndarray:
    """Pixels whose centre lies within a vessel's radius of its axis."""
    ys = np.arange(geometry.ny)[:, None] * geometry.dy
    xs = np.arange(geometry.nx)[None, :] * geometry.dx
    bits = np.zeros(geometry.shape, dtype=bool)
    for v in vessels:
        bits |= _segment_distance(ys, xs, v.start, v.end) <= v.diameter / 2
    return bits


def _clutter_field(spec: PhantomSpec, rng) -> np.ndarray:
    g = spec.geometry
    if spec.clutter_amplitude == 0:
        return np.zeros(g.shape)
    white = rng.standard_normal(g.shape)
    field_ = ndimage.gaussian_filter(
        white, (spec.clutter_scale / g.dy, spec.clutter_scale / g.dx), mode="reflect"
    )
    lo, hi = field_.min(), field_.max()
    if hi > lo:
        field_ = (field_ - lo) / (hi - lo)
    else:
        field_ = np.full(g.shape, 0.5)
    return spec.clutter_amplitude * field_


def _psf_matrix(spec: PhantomSpec) -> np.ndarray:
    """Inverse covariance of the (possibly elongated) bubble PSF."""
    s_major = spec.psf_sigma * spec.psf_aspect
    s_minor = spec.psf_sigma
    c, s = np.cos(spec.psf_angle), np.sin(spec.psf_angle)
    rot = np.array([[s, c], [c, -s]])  # columns: major axis (y, x), minor axis
    cov = rot @ np.diag([s_major**2, s_minor**2]) @ rot.T
    return np.linalg.inv(cov)


def _draw_amplitudes(rng, n, lo, hi) -> np.ndarray:
    if lo == hi:
        return np.full(n, lo)
    return np.exp(rng.uniform(np.log(lo), np.log(hi), n))


def generate_phantom(spec: PhantomSpec) -> tuple[FrameStack, GroundTruth]:
    """Render the phantom stack (float32) and its ground truth."""
    g = spec.geometry
    mg = spec.mask_geometry()
    half_diag = 0.5 * float(np.hypot(mg.dy, mg.dx))
    root = np.random.SeedSequence(spec.seed)
    clutter_seq, motion_seq, noise_seq = root.spawn(3)
    clutter = _clutter_field(spec, np.random.default_rng(clutter_seq))
    rng = np.random.default_rng(motion_seq)

    # per-vessel bubble state: arc position, lateral offset, amplitude, id
    state = []
    next_id = 0
    lateral_max = []
    for v in spec.vessels:
        lo, hi = v.amplitude_range or spec.amplitude_range
        lat = max(v.diameter / 2 - half_diag, 0.0)
        lateral_max.append(lat)
        n0 = rng.poisson(v.density)
        s = rng.uniform(0.0, v.length, n0)
        state.append({
            "s": s,
            "lat": rng.uniform(-lat, lat, n0),
            "amp": _draw_amplitudes(rng, n0, lo, hi),
            "id": np.arange(next_id, next_id + n0),
        })
        next_id += n0

    inv_cov = _psf_matrix(spec)
    reach = 4.0 * spec.psf_sigma * max(spec.psf_aspect, 1.0)
    ry = int(np.ceil(reach / g.dy))
    rx = int(np.ceil(reach / g.dx))
    frames = np.empty((spec.nframes, g.ny, g.nx), dtype=np.float32)
    cols = {k: [] for k in ("frame", "bubble_id", "vessel", "y", "x", "amplitude", "vy", "vx")}

    for t in range(spec.nframes):
        img = clutter * (1.0 + spec.clutter_drift * np.sin(2 * np.pi * t / spec.nframes))
        for vi, (v, st) in enumerate(zip(spec.vessels, state)):
            u = v.direction
            nrm = np.array([-u[1], u[0]])
            pos = np.asarray(v.start) + st["s"][:, None] * u + st["lat"][:, None] * nrm
            for k in range(pos.shape[0]):
                y0, x0 = pos[k]
                r0 = max(int(np.floor(y0 / g.dy)) - ry, 0)
                r1 = min(int(np.ceil(y0 / g.dy)) + ry, g.ny - 1)
                c0 = max(int(np.floor(x0 / g.dx)) - rx, 0)
                c1 = min(int(np.ceil(x0 / g.dx)) + rx, g.nx - 1)
                dy = np.arange(r0, r1 + 1)[:, None] * g.dy - y0
                dx = np.arange(c0, c1 + 1)[None, :] * g.dx - x0
                q = inv_cov[0, 0] * dy * dy + 2 * inv_cov[0, 1] * dy * dx + inv_cov[1, 1] * dx * dx
                img[r0 : r1 + 1, c0 : c1 + 1] += st["amp"][k] * np.exp(-0.5 * q)
            n = pos.shape[0]
            cols["frame"].append(np.full(n, t))
            cols["bubble_id"].append(st["id"])
            cols["vessel"].append(np.full(n, vi))
            cols["y"].append(pos[:, 0])
            cols["x"].append(pos[:, 1])
            cols["amplitude"].append(st["amp"])
            cols["vy"].append(np.full(n, v.speed * u[0]))
            cols["vx"].append(np.full(n, v.speed * u[1]))
        frames[t] = img

        # advance, drop bubbles past the outlet, spawn at the inlet
        for vi, (v, st) in enumerate(zip(spec.vessels, state)):
            step = v.speed * g.dt
            st["s"] = st["s"] + step
            keep = st["s"] <= v.length
            for key in ("s", "lat", "amp", "id"):
                st[key] = st[key][keep]
            if step > 0:
                rate = v.density * step / v.length
                k = rng.poisson(rate)
                if k:
                    lo, hi = v.amplitude_range or spec.amplitude_range
                    st["s"] = np.concatenate([st["s"], rng.uniform(0.0, step, k)])
                    st["lat"] = np.concatenate([st["lat"], rng.uniform(-lateral_max[vi], lateral_max[vi], k)])
                    st["amp"] = np.concatenate([st["amp"], _draw_amplitudes(rng, k, lo, hi)])
                    st["id"] = np.concatenate([st["id"], np.arange(next_id, next_id + k)])
                    next_id += k

    stack = FrameStack(g, frames)
    if spec.noise_rel > 0:
        stack = add_noise(stack, spec.noise_rel, int(noise_seq.generate_state(1)[0]))

    if spec.vessels:
        mask = mask_from_image(rasterize_vessels(spec.vessels, mg), mg)
    else:
        mask = VesselMask(mg, np.zeros(mg.shape, dtype=bool), np.full(mg.shape, np.inf))

    def cat(key, dtype):
        parts = cols[key]
        return np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype=dtype)

    truth = GroundTruth(
        frame=cat("frame", np.int64),
        bubble_id=cat("bubble_id", np.int64),
        vessel=cat("vessel", np.int64),
        y=cat("y", np.float64),
        x=cat("x", np.float64),
        amplitude=cat("amplitude", np.float64),
        vy=cat("vy", np.float64),
        vx=cat("vx", np.float64),
        mask=mask,
        nframes=spec.nframes,
    )
    return stack, truth


def default_phantom_spec(nframes: int = 720, seed: int = 0) -> PhantomSpec:
    """A 3.84 x 3.84 mm field with four vessels of 33 to 150 um diameter and
    bubble amplitudes spanning a decade."""
    g = GridGeometry(64, 128)
    vessels = (
        VesselSpec((0.4e-3, 0.3e-3), (3.4e-3, 3.5e-3), 150e-6, 10e-3, 6.0, (0.1, 1.0)),
        VesselSpec((3.3e-3, 0.3e-3), (2.0e-3, 3.5e-3), 80e-6, 8e-3, 4.0, (0.6, 1.0)),
        VesselSpec((0.3e-3, 2.2e-3), (1.4e-3, 3.6e-3), 49e-6, 8e-3, 0.5, (0.2, 0.3)),
        VesselSpec((1.6e-3, 0.3e-3), (2.6e-3, 1.0e-3), 33e-6, 6e-3, 0.5, (0.2, 0.3)),
    )
    return PhantomSpec(g, vessels, (0.1, 1.0), clutter_amplitude=2.0, nframes=nframes, seed=seed)


def vessel_probes(vessels, geometry: GridGeometry, fractions=(0.25, 0.5, 0.75),
                  radius: float = 100e-6, background_margin: float = 300e-6):
    """Probe regions for contrast measurements.

    Returns one boolean region per (vessel, fraction): the vessel's pixels
    within ``radius`` of the point at that fraction of its length. The
    background region holds every pixel farther than ``background_margin``
    from all vessels.
    """
    allv = rasterize_vessels(vessels, geometry)
    far = ndimage.distance_transform_edt(~allv, sampling=(geometry.dy, geometry.dx)) > background_margin
    yy = np.arange(geometry.ny)[:, None] * geometry.dy
    xx = np.arange(geometry.nx)[None, :] * geometry.dx
    probes = []
    for v in vessels:
        inside = rasterize_vessels((v,), geometry)
        for f in fractions:
            p = np.asarray(v.start) + f * v.length * v.direction
            probes.append(inside & (np.hypot(yy - p[0], xx - p[1]) <= radius))
    return probes, far
