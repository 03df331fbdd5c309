"""Frame-to-frame nearest-neighbour pairing for flow velocity estimates."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import groupby
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError
from .localize import Localization


@dataclass(frozen=True)
class VelocityVector:
    frame_index: int
    y: float
    x: float
    vy: float
    vx: float
    distance: float

    @property
    def speed(self) -> float:
        return float(np.hypot(self.vy, self.vx))


def nn_pair_velocities(locs_n: Sequence[Localization], locs_n1: Sequence[Localization],
                       dt: float = 2e-3, max_disp: float = 60e-6) -> list[VelocityVector]:
    """Pair localizations of consecutive frames, shortest distances first.

    All candidate pairs closer than ``max_disp`` are sorted by distance and
    accepted greedily while neither end is already used.
    """
    if not dt > 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    if not max_disp > 0:
        raise ConfigError(f"max_disp must be positive, got {max_disp}")
    if not locs_n or not locs_n1:
        return []
    a = np.array([[l.y, l.x] for l in locs_n])
    b = np.array([[l.y, l.x] for l in locs_n1])
    sdm = cKDTree(a).sparse_distance_matrix(cKDTree(b), max_disp, output_type="ndarray")
    if sdm.size == 0:
        return []
    order = np.lexsort((sdm["j"], sdm["i"], sdm["v"]))
    used_a = np.zeros(len(a), dtype=bool)
    used_b = np.zeros(len(b), dtype=bool)
    out = []
    for k in order:
        i, j, d = int(sdm["i"][k]), int(sdm["j"][k]), float(sdm["v"][k])
        if used_a[i] or used_b[j] or d > max_disp:
            continue
        used_a[i] = used_b[j] = True
        dy, dx = b[j] - a[i]
        d = float(np.hypot(dy, dx))
        out.append(VelocityVector(
            frame_index=locs_n[i].frame_index,
            y=float(0.5 * (a[i, 0] + b[j, 0])),
            x=float(0.5 * (a[i, 1] + b[j, 1])),
            vy=float(dy / dt),
            vx=float(dx / dt),
            distance=d,
        ))
    return out


def track_localizations(locs: Sequence[Localization], dt: float = 2e-3,
                        max_disp: float = 60e-6) -> list[VelocityVector]:
    """Velocities for every pair of consecutive frames in ``locs``."""
    by_frame = {k: list(g) for k, g in groupby(sorted(locs, key=lambda l: l.frame_index),
                                                key=lambda l: l.frame_index)}
    out = []
    for f in sorted(by_frame):
        if f + 1 in by_frame:
            out.extend(nn_pair_velocities(by_frame[f], by_frame[f + 1], dt, max_disp))
    return out


def write_velocities_csv(vectors: Sequence[VelocityVector], path) -> None:
    with open(path, "w") as fh:
        fh.write("frame,y_m,x_m,vy_mps,vx_mps\n")
        for v in vectors:
            fh.write(f"{v.frame_index},{v.y!r},{v.x!r},{v.vy!r},{v.vx!r}\n")
