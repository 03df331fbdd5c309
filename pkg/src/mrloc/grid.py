"""Image containers, pixel geometry, global normalization and FST file I/O.

FST layout (little-endian)::

    magic "FST1" | u32 version=1 | u32 nframes | u32 ny | u32 nx
    | f64 dy_m | f64 dx_m | f64 dt_s | f64 wavelength_m
    | payload

The payload of a frame stack is ``nframes*ny*nx`` float32 values, frame-major
and row-major within a frame. A vessel mask uses the same header with
``nframes=1`` and a u8 payload of 0/1 values.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DataError, FormatError

MAGIC = b"FST1"
VERSION = 1
_HEADER = struct.Struct("<4sIIII4d")
HEADER_SIZE = _HEADER.size  # 52 bytes


@dataclass(frozen=True)
class GridGeometry:
    """Pixel grid of a frame, in SI units.

    Defaults follow a 25 MHz linear-array acquisition: 60 um axial by 30 um
    lateral pixels, 2 ms between frames and a 60 um wavelength.
    """

    ny: int
    nx: int
    dy: float = 60e-6
    dx: float = 30e-6
    dt: float = 2e-3
    wavelength: float = 60e-6

    def __post_init__(self):
        if int(self.ny) < 1 or int(self.nx) < 1:
            raise ConfigError(f"grid must have at least one pixel, got {self.ny}x{self.nx}")
        for name in ("dy", "dx", "dt", "wavelength"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be positive and finite, got {v}")
        object.__setattr__(self, "ny", int(self.ny))
        object.__setattr__(self, "nx", int(self.nx))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def pixel_area(self) -> float:
        return self.dy * self.dx

    @property
    def height(self) -> float:
        """Distance between the first and last row centres."""
        return (self.ny - 1) * self.dy

    @property
    def width(self) -> float:
        return (self.nx - 1) * self.dx

    def upsampled(self, factor_y: int, factor_x: int) -> "GridGeometry":
        """Geometry of the corner-aligned grid refined by integer factors."""
        return replace(
            self,
            ny=self.ny * factor_y,
            nx=self.nx * factor_x,
            dy=self.dy / factor_y,
            dx=self.dx / factor_x,
        )

    def contains(self, y: float, x: float) -> bool:
        return 0.0 <= y <= self.height and 0.0 <= x <= self.width

    def to_dict(self) -> dict:
        return {
            "ny": self.ny,
            "nx": self.nx,
            "dy": self.dy,
            "dx": self.dx,
            "dt": self.dt,
            "wavelength": self.wavelength,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridGeometry":
        return cls(**{k: d[k] for k in ("ny", "nx", "dy", "dx", "dt", "wavelength") if k in d})


@dataclass(frozen=True, eq=False)
class Frame:
    """A single 2D intensity image on a :class:`GridGeometry`."""

    geometry: GridGeometry
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.shape != self.geometry.shape:
            raise DataError(f"frame data shape {data.shape} != geometry {self.geometry.shape}")
        if not np.all(np.isfinite(data)):
            raise DataError("frame contains non-finite values")
        object.__setattr__(self, "data", data)

    def with_data(self, data: np.ndarray, geometry: GridGeometry | None = None) -> "Frame":
        return Frame(geometry or self.geometry, data)


@dataclass(frozen=True, eq=False)
class FrameStack:
    """Time-ordered frames sharing one geometry.

    ``data`` has shape ``(nframes, ny, nx)``.
    """

    geometry: GridGeometry
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or data.shape[0] < 1:
            raise DataError(f"stack data must be (nframes>=1, ny, nx), got {data.shape}")
        if data.shape[1:] != self.geometry.shape:
            raise DataError(f"stack frame shape {data.shape[1:]} != geometry {self.geometry.shape}")
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        object.__setattr__(self, "data", data)

    @property
    def nframes(self) -> int:
        return self.data.shape[0]

    def frame(self, index: int) -> Frame:
        return Frame(self.geometry, self.data[index])

    @property
    def frames(self) -> Iterator[Frame]:
        for i in range(self.nframes):
            yield self.frame(i)

    def with_data(self, data: np.ndarray) -> "FrameStack":
        return FrameStack(self.geometry, data)

    def __eq__(self, other):
        if not isinstance(other, FrameStack):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class VesselMask:
    """Binary reference vessel map with its Euclidean distance field (metres)."""

    geometry: GridGeometry
    bits: np.ndarray
    distance: np.ndarray = field(repr=False)

    @property
    def area_px(self) -> int:
        return int(np.count_nonzero(self.bits))


def _check_finite(values: np.ndarray, path) -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        first = int(np.flatnonzero(bad.ravel())[0])
        raise FormatError(
            "non-finite value in payload", offset=HEADER_SIZE + 4 * first, path=path
        )


def _pack_header(nframes: int, g: GridGeometry) -> bytes:
    return _HEADER.pack(MAGIC, VERSION, nframes, g.ny, g.nx, g.dy, g.dx, g.dt, g.wavelength)


def _read_header(buf: bytes, path) -> tuple[int, GridGeometry]:
    if len(buf) < HEADER_SIZE:
        raise FormatError(
            f"file too short for header ({len(buf)} < {HEADER_SIZE} bytes)",
            offset=len(buf),
            path=path,
        )
    magic, version, nframes, ny, nx, dy, dx, dt, wl = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0, path=path)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4, path=path)
    if nframes < 1:
        raise FormatError("nframes must be >= 1", offset=8, path=path)
    try:
        geometry = GridGeometry(ny, nx, dy, dx, dt, wl)
    except ConfigError as exc:
        raise FormatError(f"invalid geometry in header: {exc}", offset=12, path=path) from exc
    return nframes, geometry


def save_stack(stack: FrameStack, path) -> None:
    """Write ``stack`` as FST; values are stored as float32."""
    path = Path(path)
    payload = np.ascontiguousarray(stack.data, dtype="<f4")
    try:
        with open(path, "wb") as fh:
            fh.write(_pack_header(stack.nframes, stack.geometry))
            fh.write(payload.tobytes())
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write frame stack: {exc.strerror}", str(path)) from exc


def load_stack(path) -> FrameStack:
    """Read an FST frame stack. The result holds float32 data."""
    path = Path(path)
    buf = path.read_bytes()
    nframes, geometry = _read_header(buf, path)
    count = nframes * geometry.ny * geometry.nx
    expected = HEADER_SIZE + 4 * count
    if len(buf) < expected:
        have = (len(buf) - HEADER_SIZE) // (4 * geometry.ny * geometry.nx)
        raise FormatError(
            f"truncated payload: header declares {nframes} frames, file holds {have}",
            offset=len(buf),
            path=path,
        )
    if len(buf) > expected:
        raise FormatError("trailing bytes after payload", offset=expected, path=path)
    values = np.frombuffer(buf, dtype="<f4", count=count, offset=HEADER_SIZE)
    _check_finite(values, path)
    data = values.astype(np.float32).reshape(nframes, geometry.ny, geometry.nx)
    return FrameStack(geometry, data)


def save_mask(mask: VesselMask, path) -> None:
    path = Path(path)
    payload = np.ascontiguousarray(mask.bits, dtype=np.uint8)
    try:
        with open(path, "wb") as fh:
            fh.write(_pack_header(1, mask.geometry))
            fh.write(payload.tobytes())
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write mask: {exc.strerror}", str(path)) from exc


def load_mask(path) -> VesselMask:
    path = Path(path)
    buf = path.read_bytes()
    nframes, geometry = _read_header(buf, path)
    if nframes != 1:
        raise FormatError(f"mask must have nframes=1, got {nframes}", offset=8, path=path)
    count = geometry.ny * geometry.nx
    if len(buf) != HEADER_SIZE + count:
        raise FormatError(
            f"mask payload is {len(buf) - HEADER_SIZE} bytes, expected {count}",
            offset=min(len(buf), HEADER_SIZE + count),
            path=path,
        )
    values = np.frombuffer(buf, dtype=np.uint8, offset=HEADER_SIZE)
    bad = values > 1
    if bad.any():
        raise FormatError(
            "mask payload must be 0/1",
            offset=HEADER_SIZE + int(np.flatnonzero(bad)[0]),
            path=path,
        )
    return mask_from_image(values.reshape(geometry.shape).astype(bool), geometry)


def normalize_stack(stack: FrameStack) -> FrameStack:
    """Affinely map the whole stack onto [0, 1] with one global min/max.

    The output keeps the input's floating dtype. The global maximum maps to
    exactly 1 and the minimum to exactly 0.
    """
    data = stack.data
    lo = float(data.min())
    hi = float(data.max())
    if not hi > lo:
        raise DataError(f"cannot normalize a constant stack (value {lo})")
    if lo == 0.0 and hi == 1.0:
        return stack
    out = (data.astype(np.float64) - lo) / (hi - lo)
    out = out.astype(data.dtype)
    # float32 rounding can only push values inside [0, 1], but clamp anyway
    np.clip(out, 0.0, 1.0, out=out)
    return stack.with_data(out)


def mask_from_image(bits, geometry: GridGeometry) -> VesselMask:
    """Build a :class:`VesselMask` with the exact Euclidean distance (metres)
    from each pixel centre to the nearest true pixel centre."""
    bits = np.asarray(bits, dtype=bool)
    if bits.shape != geometry.shape:
        raise DataError(f"mask shape {bits.shape} != geometry {geometry.shape}")
    if not bits.any():
        raise DataError("vessel mask is empty")
    distance = ndimage.distance_transform_edt(~bits, sampling=(geometry.dy, geometry.dx))
    distance[bits] = 0.0
    return VesselMask(geometry, bits.copy(), distance)
