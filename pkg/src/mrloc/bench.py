"""Per-frame timing harness for the localizers and the reconstruction kernels."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .grid import FrameStack, GridGeometry
from .localize import localize_frame, threshold_baseline
from .morphology import FLAT8, reconstruct_fast, reconstruct_naive
from .pipeline import PipelineConfig, filter_stack
from .preprocess import preprocess_frame


@dataclass(frozen=True)
class BenchReport:
    """Timing of one (method, interpolation factor, h) combination.

    Times are wall-clock milliseconds per frame and exclude SVD filtering,
    which is reported once in ``filter_ms`` for reference.
    """

    method: str
    factor: int
    h: float | None
    preprocess_ms_mean: float
    preprocess_ms_std: float
    localize_ms_mean: float
    localize_ms_std: float
    total_ms_mean: float
    total_ms_std: float
    peaks_per_frame_mean: float
    peaks_per_frame_std: float
    nframes: int
    repeats: int
    filter_ms: float

    def to_dict(self) -> dict:
        return asdict(self)


def _time_method(filtered: FrameStack, cfg: PipelineConfig, method: str, repeats: int):
    detector = localize_frame if method == "mr" else threshold_baseline
    pre_t, loc_t, counts = [], [], []
    for rep in range(repeats):
        for t in range(filtered.nframes):
            t0 = time.perf_counter()
            frame = preprocess_frame(filtered.frame(t), cfg.preprocess)
            t1 = time.perf_counter()
            locs = detector(frame, cfg.localize, t)
            t2 = time.perf_counter()
            pre_t.append(t1 - t0)
            loc_t.append(t2 - t1)
            if rep == 0:
                counts.append(len(locs))
    pre = 1e3 * np.asarray(pre_t)
    loc = 1e3 * np.asarray(loc_t)
    tot = pre + loc
    c = np.asarray(counts, dtype=float)
    return (float(pre.mean()), float(pre.std()), float(loc.mean()), float(loc.std()),
            float(tot.mean()), float(tot.std()), float(c.mean()), float(c.std()))


def bench(cfg: PipelineConfig, stack: FrameStack, interpolation_factors: Sequence[int],
          h_values: Sequence[float], repeats: int = 3, include_baseline: bool = True,
          warmup: bool = True) -> list[BenchReport]:
    """Time interpolation, smoothing and localization per frame.

    One MR row per (factor, h) and, when ``include_baseline`` is set, one
    thresholding row per factor. The same interpolation factor is applied on
    both axes.
    """
    if repeats < 3:
        raise ConfigError(f"repeats must be >= 3, got {repeats}")
    if not interpolation_factors or not h_values:
        raise ConfigError("need at least one interpolation factor and one h value")
    t0 = time.perf_counter()
    filtered = filter_stack(stack, cfg.svd)
    filter_ms = 1e3 * (time.perf_counter() - t0)
    if warmup:
        # first call compiles the reconstruction kernel
        probe = preprocess_frame(filtered.frame(0), cfg.preprocess)
        localize_frame(probe, cfg.localize)

    rows = []
    for f in interpolation_factors:
        pre = replace(cfg.preprocess, factor_y=int(f), factor_x=int(f))
        for h in h_values:
            c = replace(cfg, preprocess=pre, localize=replace(cfg.localize, h=float(h)))
            stats = _time_method(filtered, c, "mr", repeats)
            rows.append(BenchReport("mr", int(f), float(h), *stats, filtered.nframes, repeats, filter_ms))
        if include_baseline:
            c = replace(cfg, preprocess=pre)
            stats = _time_method(filtered, c, "baseline", repeats)
            rows.append(BenchReport("baseline", int(f), None, *stats, filtered.nframes, repeats, filter_ms))
    return rows


def peak_field(size: int = 256, npeaks: int = 100, sigma_px=(6.0, 10.0), seed: int = 0) -> np.ndarray:
    """Sum of randomly placed Gaussian bumps, scaled to [0, 1]."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.zeros((size, size))
    for _ in range(npeaks):
        cy, cx = rng.uniform(0, size, 2)
        s = rng.uniform(*sigma_px)
        img += rng.uniform(0.2, 1.0) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
    return img / img.max()


@dataclass(frozen=True)
class ReconstructionBench:
    size: int
    npeaks: int
    repeats: int
    naive_ms: float
    fast_ms: float
    speedup: float
    identical: bool

    def to_dict(self) -> dict:
        return asdict(self)


def bench_reconstruction(size: int = 256, npeaks: int = 100, h: float = 0.05,
                         repeats: int = 5, seed: int = 0) -> ReconstructionBench:
    """Median wall-clock of naive against fast reconstruction of ``I - h``
    under ``I`` on a synthetic peak field."""
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    mask = peak_field(size, npeaks, seed=seed)
    marker = np.maximum(mask - h, 0.0)
    reconstruct_fast(mask[:8, :8], marker[:8, :8], FLAT8)

    def timed(fn):
        times, out = [], None
        for _ in range(repeats):
            t0 = time.perf_counter()
            out = fn(mask, marker, FLAT8)
            times.append(time.perf_counter() - t0)
        return 1e3 * float(np.median(times)), out

    naive_ms, a = timed(reconstruct_naive)
    fast_ms, b = timed(reconstruct_fast)
    return ReconstructionBench(size, npeaks, repeats, naive_ms, fast_ms,
                               naive_ms / fast_ms, bool(np.array_equal(a, b)))


def bench_geometry_stack(geometry: GridGeometry, nframes: int, seed: int = 0) -> FrameStack:
    """Small random-bubble stack for quick timing runs without an input file."""
    from .synth import PhantomSpec, VesselSpec, generate_phantom

    g = geometry
    # shrink the vessels on tiny grids so they stay inside the frame
    d1 = min(100e-6, 0.2 * min(g.height, g.width))
    d2 = 0.6 * d1
    y0, y1 = max(0.15 * g.height, d1 / 2), min(0.85 * g.height, g.height - d1 / 2)
    x0, x1 = max(0.1 * g.width, d1 / 2), min(0.9 * g.width, g.width - d1 / 2)
    vessels = (
        VesselSpec((y0, x0), (y1, x1), d1, 10e-3, 10.0),
        VesselSpec((y1, x0), (y0, x1), d2, 8e-3, 10.0),
    )
    stack, _ = generate_phantom(PhantomSpec(g, vessels, nframes=nframes, seed=seed))
    return stack


__all__ = ["BenchReport", "ReconstructionBench", "bench", "bench_reconstruction",
           "bench_geometry_stack", "peak_field"]
