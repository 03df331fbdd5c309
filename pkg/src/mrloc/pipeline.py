"""End-to-end processing: clutter filtering, per-frame localization and SR
rendering, plus the configuration that drives it."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from .evaluate import add_noise, in_vessel_fraction, upper_bound
from .grid import FrameStack, VesselMask, load_mask, load_stack, normalize_stack, save_stack
from .localize import Localization, LocalizeConfig, localize_frame, threshold_baseline
from .preprocess import PreprocessConfig, preprocess_frame
from .render import SRImage, accumulate_sr, write_pgm
from .svd_filter import SvdFilterConfig, svd_clutter_filter

log = logging.getLogger(__name__)

METHODS = ("mr", "baseline")
PEAKS_HEADER = "frame,y_m,x_m,amplitude,area_wl2,orientation_rad"


@dataclass(frozen=True)
class PipelineConfig:
    svd: SvdFilterConfig = field(default_factory=SvdFilterConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    localize: LocalizeConfig = field(default_factory=LocalizeConfig)
    method: str = "mr"
    render_sigma: float | None = None
    tolerances: tuple[float, ...] = (0.0, 20e-6, 50e-6)
    noise_rel: float = 0.0
    seed: int = 0
    threads: int = 1
    input: str | None = None
    mask: str | None = None
    output_dir: str | None = None
    persist_intermediates: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.noise_rel < 0:
            raise ConfigError("noise_rel must be >= 0")
        if self.render_sigma is not None and not self.render_sigma > 0:
            raise ConfigError("render_sigma must be positive")
        object.__setattr__(self, "tolerances", tuple(float(t) for t in self.tolerances))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tolerances"] = list(self.tolerances)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        subs = {"svd": SvdFilterConfig, "preprocess": PreprocessConfig, "localize": LocalizeConfig}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        for key, typ in subs.items():
            if key in d and isinstance(d[key], dict):
                sub_known = {f.name for f in fields(typ)}
                bad = set(d[key]) - sub_known
                if bad:
                    raise ConfigError(f"unknown {key} fields: {sorted(bad)}")
                d[key] = typ(**d[key])
        if "tolerances" in d:
            d["tolerances"] = tuple(d["tolerances"])
        return cls(**d)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise ConfigError(f"invalid pipeline config {path}: {exc}") from exc


class StageError(RuntimeError):
    """Wraps a failure with the pipeline stage and frame index."""

    def __init__(self, stage: str, frame: int | None, cause: BaseException):
        self.stage = stage
        self.frame = frame
        self.cause = cause
        where = stage if frame is None else f"{stage} (frame {frame})"
        super().__init__(f"{where}: {cause}")

    @property
    def exit_code(self) -> int:
        return getattr(self.cause, "exit_code", 1)


def _normalized_or_zero(stack: FrameStack) -> FrameStack:
    if stack.data.max() > stack.data.min():
        return normalize_stack(stack)
    return stack.with_data(np.zeros_like(stack.data))


def filter_stack(stack: FrameStack, cfg: SvdFilterConfig = SvdFilterConfig()) -> FrameStack:
    """Normalize, SVD clutter filter and normalize again, in float32.

    A stack without any variation passes through as zeros.
    """
    stack = stack.with_data(stack.data.astype(np.float32, copy=False))
    stack = _normalized_or_zero(stack)
    if stack.nframes >= 2 and stack.data.any():
        stack = svd_clutter_filter(stack, cfg)
    return _normalized_or_zero(stack)


def _frame_worker(stack: FrameStack, pre: PreprocessConfig, loc: LocalizeConfig, method: str):
    detector = localize_frame if method == "mr" else threshold_baseline

    def work(t: int) -> list[Localization]:
        try:
            frame = preprocess_frame(stack.frame(t), pre)
        except Exception as exc:
            raise StageError("preprocess", t, exc) from exc
        try:
            return detector(frame, loc, t)
        except Exception as exc:
            raise StageError("localize", t, exc) from exc

    return work


def localize_stack(stack: FrameStack, pre: PreprocessConfig = PreprocessConfig(),
                   loc: LocalizeConfig = LocalizeConfig(), method: str = "mr",
                   threads: int = 1) -> list[list[Localization]]:
    """Per-frame localizations of an already filtered stack, in frame order."""
    if method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}, got {method!r}")
    work = _frame_worker(stack, pre, loc, method)
    if threads <= 1:
        return [work(t) for t in range(stack.nframes)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(work, range(stack.nframes)))


def sr_geometry(stack: FrameStack, pre: PreprocessConfig):
    return stack.geometry.upsampled(pre.factor_y, pre.factor_x)


def write_peaks_csv(locs: Sequence[Localization], path) -> None:
    with open(path, "w") as fh:
        fh.write(PEAKS_HEADER + "\n")
        for l in locs:
            fh.write(
                f"{l.frame_index},{float(l.y)!r},{float(l.x)!r},{float(l.amplitude)!r},"
                f"{float(l.region_area_wl2)!r},{float(l.orientation_rad)!r}\n"
            )


def read_peaks_csv(path) -> list[Localization]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != PEAKS_HEADER:
        raise DataError(f"{path}: expected header {PEAKS_HEADER!r}")
    out = []
    for n, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 6:
            raise DataError(f"{path}:{n}: expected 6 columns")
        out.append(Localization(int(parts[0]), float(parts[1]), float(parts[2]),
                                float(parts[3]), float(parts[4]), float(parts[5])))
    return out


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class PipelineResult:
    sr: SRImage
    localizations: list[list[Localization]]
    report: dict
    timings: dict

    @property
    def flat_localizations(self) -> list[Localization]:
        return [l for frame in self.localizations for l in frame]


def run_pipeline(cfg: PipelineConfig, stack: FrameStack | None = None,
                 mask: VesselMask | None = None) -> PipelineResult:
    """normalize -> SVD filter -> per frame (interpolate, smooth, localize) ->
    accumulate SR image.

    ``stack`` and ``mask`` override ``cfg.input`` and ``cfg.mask``. When
    ``cfg.output_dir`` is set, the SR image (FST, PGM + JSON sidecar), the
    peaks CSV, ``report.json`` and ``timing.json`` are written there. Every
    file except ``timing.json`` is a deterministic function of the config.
    """
    timings = {}
    if stack is None:
        if cfg.input is None:
            raise ConfigError("no input stack given")
        stack = load_stack(cfg.input)
    if mask is None and cfg.mask is not None:
        mask = load_mask(cfg.mask)
    out_dir = Path(cfg.output_dir) if cfg.output_dir else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    if cfg.noise_rel > 0:
        stack = add_noise(stack, cfg.noise_rel, cfg.seed)

    t0 = time.perf_counter()
    try:
        filtered = filter_stack(stack, cfg.svd)
    except Exception as exc:
        raise StageError("filter", None, exc) from exc
    timings["filter_s"] = time.perf_counter() - t0
    if out_dir is not None and cfg.persist_intermediates:
        save_stack(filtered, out_dir / "filtered.fst")

    t0 = time.perf_counter()
    per_frame = localize_stack(filtered, cfg.preprocess, cfg.localize, cfg.method, cfg.threads)
    timings["localize_s"] = time.perf_counter() - t0
    timings["localize_ms_per_frame"] = 1e3 * timings["localize_s"] / filtered.nframes

    flat = [l for frame in per_frame for l in frame]
    t0 = time.perf_counter()
    sr = accumulate_sr(flat, sr_geometry(filtered, cfg.preprocess), cfg.render_sigma)
    timings["render_s"] = time.perf_counter() - t0

    counts = np.array([len(f) for f in per_frame], dtype=float)
    report = {
        "method": cfg.method,
        "nframes": filtered.nframes,
        "n_localizations": len(flat),
        "peaks_per_frame_mean": float(counts.mean()),
        "peaks_per_frame_std": float(counts.std()),
        "sr_geometry": sr.geometry.to_dict(),
        # execution details stay out so outputs match across thread counts
        "config": {k: v for k, v in cfg.to_dict().items() if k not in ("threads", "output_dir")},
    }
    if mask is not None:
        report["accuracy"] = in_vessel_fraction(flat, mask, cfg.tolerances).to_dict()
        report["upper_bound_per_frame"] = upper_bound(mask)

    if out_dir is not None:
        write_peaks_csv(flat, out_dir / "peaks.csv")
        save_stack(FrameStack(sr.geometry, sr.data[None].astype(np.float32)), out_dir / "sr.fst")
        write_pgm(sr, out_dir / "sr.pgm")
        (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
        (out_dir / "timing.json").write_text(json.dumps(timings, indent=2, sort_keys=True))
    log.info("%d localizations over %d frames", len(flat), filtered.nframes)
    return PipelineResult(sr, per_frame, report, timings)
