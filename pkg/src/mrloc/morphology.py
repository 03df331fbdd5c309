"""Grayscale geodesic dilation, morphological reconstruction and h-domes.

``reconstruct_naive`` iterates geodesic dilation to a fixed point and serves
as the reference. ``reconstruct_fast`` is the hybrid raster / anti-raster /
FIFO-queue algorithm and returns bit-identical results: both converge to the
least fixed point above the marker of the same monotone pixel update, and the
update only ever takes maxima and minima of ``marker + weight`` values.

Pixels outside the image are ignored in every maximum (``-inf`` padding).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numba
import numpy as np

from .errors import ConfigError, PreconditionError
from .grid import Frame, GridGeometry


@dataclass(frozen=True)
class StructuringElement:
    """3x3 neighbourhood with additive weights.

    ``offsets`` are ``(dy, dx)`` pairs in ``{-1, 0, 1}``; ``weights`` the
    matching additive values. The origin must be present with weight 0 so
    that dilation never lowers a pixel.
    """

    offsets: tuple[tuple[int, int], ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if len(self.offsets) != len(self.weights):
            raise ConfigError("offsets and weights differ in length")
        offs = tuple((int(a), int(b)) for a, b in self.offsets)
        if len(set(offs)) != len(offs):
            raise ConfigError("duplicate structuring element offset")
        for dy, dx in offs:
            if abs(dy) > 1 or abs(dx) > 1:
                raise ConfigError(f"offset {(dy, dx)} outside the 3x3 neighbourhood")
        if (0, 0) not in offs:
            raise ConfigError("structuring element must contain the origin")
        w = tuple(float(v) for v in self.weights)
        if not all(np.isfinite(w)):
            raise ConfigError("structuring element weights must be finite")
        if w[offs.index((0, 0))] != 0.0:
            raise ConfigError("origin weight must be 0")
        object.__setattr__(self, "offsets", offs)
        object.__setattr__(self, "weights", w)

    @classmethod
    def flat(cls, connectivity: int = 8) -> "StructuringElement":
        if connectivity == 8:
            offs = tuple((dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1))
        elif connectivity == 4:
            offs = ((-1, 0), (0, -1), (0, 0), (0, 1), (1, 0))
        else:
            raise ConfigError(f"connectivity must be 4 or 8, got {connectivity}")
        return cls(offs, (0.0,) * len(offs))

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return (
            np.asarray(self.offsets, dtype=np.int64).reshape(-1, 2),
            np.asarray(self.weights, dtype=np.float64),
        )


FLAT8 = StructuringElement.flat(8)
FLAT4 = StructuringElement.flat(4)


class MarkerMode(enum.Enum):
    SUBTRACTIVE = "subtractive"
    MULTIPLICATIVE = "multiplicative"

    @classmethod
    def parse(cls, value) -> "MarkerMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown marker mode {value!r}") from None


@dataclass(frozen=True, eq=False)
class DomeImage:
    geometry: GridGeometry
    data: np.ndarray
    h: float
    mode: MarkerMode


def _array(image) -> np.ndarray:
    data = image.data if isinstance(image, Frame) else image
    return np.ascontiguousarray(data, dtype=np.float64)


def _wrap(result: np.ndarray, like):
    return like.with_data(result) if isinstance(like, Frame) else result


def _check_pair(marker: np.ndarray, mask: np.ndarray) -> None:
    if marker.shape != mask.shape:
        raise ConfigError(f"marker shape {marker.shape} != mask shape {mask.shape}")
    bad = marker > mask
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise PreconditionError(
            f"marker exceeds mask at pixel ({r}, {c}): {marker[r, c]!r} > {mask[r, c]!r}"
        )


def dilate(image, se: StructuringElement = FLAT8):
    """``out(r) = max_{r'} image(r - r') + S(r')`` over in-bounds neighbours."""
    a = _array(image)
    ny, nx = a.shape
    padded = np.full((ny + 2, nx + 2), -np.inf)
    padded[1:-1, 1:-1] = a
    out = a.copy()  # origin term, weight 0
    for (dy, dx), w in zip(se.offsets, se.weights):
        if dy == 0 and dx == 0:
            continue
        shifted = padded[1 - dy : 1 - dy + ny, 1 - dx : 1 - dx + nx]
        np.maximum(out, shifted + w if w != 0.0 else shifted, out=out)
    return _wrap(out, image)


def geodesic_dilate(marker, mask, se: StructuringElement = FLAT8):
    """Elementary geodesic dilation ``min(dilate(marker), mask)``."""
    j = _array(marker)
    i = _array(mask)
    _check_pair(j, i)
    return _wrap(np.minimum(dilate(j, se), i), marker)


def reconstruct_naive(mask, marker, se: StructuringElement = FLAT8):
    """Reconstruction of ``mask`` from ``marker`` by iterating geodesic
    dilation until the image stops changing."""
    i = _array(mask)
    cur = _array(marker)
    _check_pair(cur, i)
    while True:
        nxt = np.minimum(dilate(cur, se), i)
        if np.array_equal(nxt, cur):
            break
        cur = nxt
    return _wrap(cur, mask)


@numba.njit(cache=True, nogil=True)
def _hybrid_padded(mask, out, up_dc, up_w, down_dc, down_w, left_w, right_w, has_left, has_right):
    # mask/out carry a one-pixel -inf border, so border pixels never
    # propagate and no bounds checks are needed.
    #   up_*    offsets (1, dc): p pulls from (r - 1, c - dc)
    #   down_*  offsets (-1, dc): p pulls from (r + 1, c - dc)
    #   left_w  offset (0, 1): p pulls from (r, c - 1)
    #   right_w offset (0, -1): p pulls from (r, c + 1)
    ny = mask.shape[0] - 2
    nx = mask.shape[1] - 2
    w = nx + 2
    nu = up_dc.shape[0]
    nd = down_dc.shape[0]
    tmp = np.empty(nx + 2)

    # raster pass: previous row is final, so its term is computed without a
    # loop-carried dependency; only the in-row term is sequential
    for r in range(1, ny + 1):
        for c in range(1, nx + 1):
            v = out[r, c]
            for m in range(nu):
                cand = out[r - 1, c - up_dc[m]] + up_w[m]
                if cand > v:
                    v = cand
            tmp[c] = v
        for c in range(1, nx + 1):
            v = tmp[c]
            if has_left:
                cand = out[r, c - 1] + left_w
                if cand > v:
                    v = cand
            lim = mask[r, c]
            out[r, c] = v if v < lim else lim

    queue = np.empty(ny * nx, dtype=np.int64)
    queued = np.zeros((ny + 2) * w, dtype=np.bool_)
    cap = ny * nx
    size = 0

    # anti-raster pass
    for r in range(ny, 0, -1):
        for c in range(1, nx + 1):
            v = out[r, c]
            for m in range(nd):
                cand = out[r + 1, c - down_dc[m]] + down_w[m]
                if cand > v:
                    v = cand
            tmp[c] = v
        for c in range(nx, 0, -1):
            v = tmp[c]
            if has_right:
                cand = out[r, c + 1] + right_w
                if cand > v:
                    v = cand
            lim = mask[r, c]
            out[r, c] = v if v < lim else lim
        # enqueue p if it could still raise a receiver visited before it:
        # receivers are p + r' for the "up" offsets and (0, 1)
        for c in range(1, nx + 1):
            v = out[r, c]
            push = False
            for m in range(nu):
                qc = c + up_dc[m]
                cand = v + up_w[m]
                mq = mask[r + 1, qc]
                if mq < cand:
                    cand = mq
                if cand > out[r + 1, qc]:
                    push = True
                    break
            if not push and has_left:
                cand = v + left_w
                mq = mask[r, c + 1]
                if mq < cand:
                    cand = mq
                if cand > out[r, c + 1]:
                    push = True
            if push:
                p = r * w + c
                queued[p] = True
                queue[size] = p
                size += 1

    # FIFO propagation over the full neighbourhood
    k = nu + nd + (1 if has_left else 0) + (1 if has_right else 0)
    dr_all = np.empty(k, dtype=np.int64)
    dc_all = np.empty(k, dtype=np.int64)
    w_all = np.empty(k)
    i = 0
    for m in range(nu):
        dr_all[i] = 1
        dc_all[i] = up_dc[m]
        w_all[i] = up_w[m]
        i += 1
    for m in range(nd):
        dr_all[i] = -1
        dc_all[i] = down_dc[m]
        w_all[i] = down_w[m]
        i += 1
    if has_left:
        dr_all[i] = 0
        dc_all[i] = 1
        w_all[i] = left_w
        i += 1
    if has_right:
        dr_all[i] = 0
        dc_all[i] = -1
        w_all[i] = right_w
        i += 1

    head = 0
    while size > 0:
        p = queue[head]
        head += 1
        if head == cap:
            head = 0
        size -= 1
        queued[p] = False
        r = p // w
        c = p - r * w
        v = out[r, c]
        for m in range(k):
            qr = r + dr_all[m]
            qc = c + dc_all[m]
            cand = v + w_all[m]
            mq = mask[qr, qc]
            if mq < cand:
                cand = mq
            if cand > out[qr, qc]:
                out[qr, qc] = cand
                q = qr * w + qc
                if not queued[q]:
                    queued[q] = True
                    tail = head + size
                    if tail >= cap:
                        tail -= cap
                    queue[tail] = q
                    size += 1
    return out


@numba.njit(cache=True, nogil=True)
def _hybrid_flat(mask, out, diag):
    # Flat 3x3 (diag=True) or cross (diag=False) element; same scheme as
    # _hybrid_padded with the weights known to be zero.
    ny = mask.shape[0] - 2
    nx = mask.shape[1] - 2
    w = nx + 2
    tmp = np.empty(nx + 2)

    for r in range(1, ny + 1):
        a = out[r - 1]
        o = out[r]
        mk = mask[r]
        if diag:
            for c in range(1, nx + 1):
                tmp[c] = max(max(o[c], a[c]), max(a[c - 1], a[c + 1]))
        else:
            for c in range(1, nx + 1):
                tmp[c] = max(o[c], a[c])
        v = o[0]
        for c in range(1, nx + 1):
            v = min(max(tmp[c], v), mk[c])
            o[c] = v

    cap = ny * nx
    queue = np.empty(cap, dtype=np.int64)
    queued = np.zeros((ny + 2) * w, dtype=np.bool_)
    size = 0

    for r in range(ny, 0, -1):
        b = out[r + 1]
        o = out[r]
        mk = mask[r]
        mb = mask[r + 1]
        if diag:
            for c in range(1, nx + 1):
                tmp[c] = max(max(o[c], b[c]), max(b[c - 1], b[c + 1]))
        else:
            for c in range(1, nx + 1):
                tmp[c] = max(o[c], b[c])
        v = o[nx + 1]
        for c in range(nx, 0, -1):
            v = min(max(tmp[c], v), mk[c])
            o[c] = v
        for c in range(1, nx + 1):
            v = o[c]
            push = min(v, mb[c]) > b[c] or min(v, mk[c + 1]) > o[c + 1]
            if diag and not push:
                push = min(v, mb[c - 1]) > b[c - 1] or min(v, mb[c + 1]) > b[c + 1]
            if push:
                p = r * w + c
                queued[p] = True
                queue[size] = p
                size += 1

    if diag:
        deltas = np.array([-w - 1, -w, -w + 1, -1, 1, w - 1, w, w + 1])
    else:
        deltas = np.array([-w, -1, 1, w])
    flat_out = out.ravel()
    flat_mask = mask.ravel()
    head = 0
    while size > 0:
        p = queue[head]
        head += 1
        if head == cap:
            head = 0
        size -= 1
        queued[p] = False
        v = flat_out[p]
        for d in deltas:
            q = p + d
            cand = min(v, flat_mask[q])
            if cand > flat_out[q]:
                flat_out[q] = cand
                if not queued[q]:
                    queued[q] = True
                    tail = head + size
                    if tail >= cap:
                        tail -= cap
                    queue[tail] = q
                    size += 1
    return out


def _hybrid_reconstruct(mask: np.ndarray, marker: np.ndarray, se: StructuringElement) -> np.ndarray:
    ny, nx = mask.shape
    pm = np.full((ny + 2, nx + 2), -np.inf)
    pm[1:-1, 1:-1] = mask
    po = np.full((ny + 2, nx + 2), -np.inf)
    po[1:-1, 1:-1] = marker
    if se == FLAT8 or se == FLAT4:
        return _hybrid_flat(pm, po, se == FLAT8)[1:-1, 1:-1].copy()
    up = [(dx, w) for (dy, dx), w in zip(se.offsets, se.weights) if dy == 1]
    down = [(dx, w) for (dy, dx), w in zip(se.offsets, se.weights) if dy == -1]
    row = {dx: w for (dy, dx), w in zip(se.offsets, se.weights) if dy == 0}
    out = _hybrid_padded(
        pm,
        po,
        np.array([d for d, _ in up], dtype=np.int64),
        np.array([w for _, w in up], dtype=np.float64),
        np.array([d for d, _ in down], dtype=np.int64),
        np.array([w for _, w in down], dtype=np.float64),
        row.get(1, 0.0),
        row.get(-1, 0.0),
        1 in row,
        -1 in row,
    )
    return out[1:-1, 1:-1].copy()


def reconstruct_fast(mask, marker, se: StructuringElement = FLAT8):
    """Same result as :func:`reconstruct_naive`, bit for bit, in a few passes."""
    i = _array(mask)
    j = _array(marker)
    _check_pair(j, i)
    return _wrap(_hybrid_reconstruct(i, j, se), mask)


def hdome(
    image: Frame,
    h: float,
    mode: MarkerMode | str = MarkerMode.SUBTRACTIVE,
    connectivity: int = 8,
) -> DomeImage:
    """Extract regional-maxima domes ``P = I - rho_I(J)``.

    The marker ``J`` is ``max(I - h, 0)`` in subtractive mode, so every dome
    is at most ``h`` high whatever the peak's brightness, or ``(1 - h) * I``
    in multiplicative mode. ``image`` should be normalized to [0, 1].
    """
    if not 0.0 < h < 1.0:
        raise ConfigError(f"h must be in (0, 1), got {h}")
    mode = MarkerMode.parse(mode)
    se = StructuringElement.flat(connectivity)
    i = _array(image)
    if mode is MarkerMode.SUBTRACTIVE:
        # min with I keeps J <= I where intensities dip below zero
        j = np.minimum(np.maximum(i - h, 0.0), i)
    else:
        j = (1.0 - h) * i
        j = np.minimum(j, i)
    rho = _hybrid_reconstruct(i, j, se)
    p = i - rho
    # rounding guard: mathematically 0 <= P <= h (subtractive) / h*I
    np.maximum(p, 0.0, out=p)
    if mode is MarkerMode.SUBTRACTIVE:
        np.minimum(p, h, out=p)
    else:
        np.minimum(p, h * np.maximum(i, 0.0), out=p)
    geometry = image.geometry if isinstance(image, Frame) else GridGeometry(*i.shape)
    return DomeImage(geometry, p, float(h), mode)
