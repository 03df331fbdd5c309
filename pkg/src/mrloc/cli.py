"""Command-line driver.

Every subcommand accepts ``--config cfg.json`` (a serialized
:class:`~mrloc.pipeline.PipelineConfig`); explicit flags override the file.
Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numerical error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, NumericalError
from .grid import FrameStack, GridGeometry, load_mask, load_stack, save_mask, save_stack

log = logging.getLogger("mrloc")


# ---------------------------------------------------------------- parsing


def _factor_pair(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    try:
        if len(parts) == 1:
            f = int(parts[0])
            return f, f
        if len(parts) == 2:
            return int(parts[0]), int(parts[1])
    except ValueError:
        pass
    raise argparse.ArgumentTypeError(f"expected FY x FX such as 12x12, got {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _box(text: str) -> tuple[int, int, int, int]:
    vals = _int_list(text)
    if len(vals) != 4:
        raise argparse.ArgumentTypeError(f"expected r0,r1,c0,c1, got {text!r}")
    return tuple(vals)


def _shape(text: str) -> tuple[int, int]:
    ny, nx = _factor_pair(text)
    return ny, nx


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="pipeline config JSON")
    p.add_argument("--threads", type=int, help="worker threads for frame-parallel stages")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_preprocess(p: argparse.ArgumentParser) -> None:
    p.add_argument("--interp", type=_factor_pair, help="interpolation factors, e.g. 12x12")
    p.add_argument("--interp-method", choices=("nearest", "bilinear", "bicubic"))
    p.add_argument("--smooth-um", type=float, help="Gaussian smoothing sigma in micrometres")


def _add_localize(p: argparse.ArgumentParser) -> None:
    p.add_argument("--h", type=float, help="dome offset in normalized intensity")
    p.add_argument("--mode", choices=("subtractive", "multiplicative"))
    p.add_argument("--connectivity", type=int, choices=(4, 8))
    p.add_argument("--psf-um", type=float, help="PSF sigma in micrometres")
    p.add_argument("--retention", type=float, help="retention fraction below the frame's top dome")
    p.add_argument("--region-floor", type=float, help="fraction of h below which dome pixels are dropped")
    p.add_argument("--baseline", action="store_true", help="use the 0.9-threshold baseline instead of MR")
    p.add_argument("--baseline-threshold", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mrloc", description="Morphological-reconstruction microbubble localization")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a phantom stack, ground truth and vessel mask")
    _add_common(p)
    p.add_argument("--spec", type=Path, help="PhantomSpec JSON (default: built-in phantom)")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--truth", type=Path)
    p.add_argument("--mask", type=Path)
    p.add_argument("--nframes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--noise-rel", type=float)
    p.add_argument("--write-spec", type=Path, help="also write the effective PhantomSpec JSON")

    p = sub.add_parser("filter", help="normalize and SVD clutter filter a stack")
    _add_common(p)
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--rel-threshold", type=float)
    p.add_argument("--keep-smallest", action="store_true", help="do not drop the smallest singular value")
    p.add_argument("--noise-rel", type=float, help="add white noise (times mean intensity) before filtering")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("preprocess", help="interpolate and smooth every frame")
    _add_common(p)
    _add_preprocess(p)
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("hdome", help="h-dome transform of single frames (debugging)")
    _add_common(p)
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--h", type=float)
    p.add_argument("--mode", choices=("subtractive", "multiplicative"))
    p.add_argument("--connectivity", type=int, choices=(4, 8))

    p = sub.add_parser("localize", help="localize bubbles in a filtered stack")
    _add_common(p)
    _add_preprocess(p)
    _add_localize(p)
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="peaks CSV")
    p.add_argument("--preprocessed", action="store_true", help="input frames are already interpolated and smoothed")

    p = sub.add_parser("render", help="accumulate an SR image from a peaks CSV")
    _add_common(p)
    _add_preprocess(p)
    p.add_argument("--peaks", type=Path, required=True)
    p.add_argument("--like", type=Path, required=True, help="stack whose grid (times --interp) defines the SR grid")
    p.add_argument("--out", type=Path, required=True, help="SR image as FST")
    p.add_argument("--pgm", type=Path, help="also export 16-bit PGM + JSON sidecar")
    p.add_argument("--sigma-um", type=float, help="Gaussian sigma (default: wavelength / 8)")
    p.add_argument("--amplitude-weighted", action="store_true", help="weight by dome amplitude (display only)")
    p.add_argument("--mip", type=Path, help="write the maximum intensity projection of --like as PGM")
    p.add_argument("--profile", type=_float_list, help="y0,x0,y1,x1 in metres")
    p.add_argument("--profile-samples", type=int, default=200)
    p.add_argument("--profile-out", type=Path)
    p.add_argument("--figure", type=Path, help="grayscale PNG of the SR image")

    p = sub.add_parser("evaluate", help="accuracy against a vessel mask and CNR of ROIs")
    _add_common(p)
    p.add_argument("--peaks", type=Path, required=True)
    p.add_argument("--mask", type=Path)
    p.add_argument("--tolerances-um", type=_float_list)
    p.add_argument("--image", type=Path, help="image (FST) for CNR")
    p.add_argument("--roi", type=_box, action="append", default=[], help="r0,r1,c0,c1 (repeatable)")
    p.add_argument("--bg", type=_box, help="background box r0,r1,c0,c1")
    p.add_argument("--report", type=Path, required=True)

    p = sub.add_parser("track", help="nearest-neighbour velocities between consecutive frames")
    _add_common(p)
    p.add_argument("--peaks", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--max-disp-um", type=float, default=60.0)
    p.add_argument("--dt-ms", type=float, default=2.0)

    p = sub.add_parser("run", help="full pipeline: filter, localize, render, evaluate")
    _add_common(p)
    _add_preprocess(p)
    _add_localize(p)
    p.add_argument("--in", dest="input", type=Path)
    p.add_argument("--mask", type=Path)
    p.add_argument("--out-dir", type=Path)
    p.add_argument("--rel-threshold", type=float)
    p.add_argument("--keep-smallest", action="store_true")
    p.add_argument("--noise-rel", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--sigma-um", type=float)
    p.add_argument("--tolerances-um", type=_float_list)
    p.add_argument("--persist-intermediates", action="store_true")
    p.add_argument("--figures", action="store_true", help="write grayscale PNGs of the SR image and MIP")
    p.add_argument("--write-config", type=Path, help="write the effective config JSON and exit")

    p = sub.add_parser("bench", help="per-frame timing across interpolation factors and h")
    _add_common(p)
    p.add_argument("--in", dest="input", type=Path, help="stack to time (default: small synthetic stack)")
    p.add_argument("--shape", type=_shape, default=(64, 64), help="synthetic stack shape NYxNX")
    p.add_argument("--nframes", type=int, default=10)
    p.add_argument("--factors", type=_int_list, default=[1, 2, 4])
    p.add_argument("--h-values", type=_float_list, default=[0.025, 0.05, 0.075])
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--no-baseline", action="store_true")
    p.add_argument("--reconstruction", action="store_true", help="also time fast against naive reconstruction")
    p.add_argument("--out", type=Path, help="CSV of BenchReport rows")
    p.add_argument("--json", type=Path, help="JSON with rows and the reconstruction timing")
    p.add_argument("--figure", type=Path)
    return ap


# ---------------------------------------------------------------- config


def _load_config(args):
    from .pipeline import PipelineConfig

    cfg = PipelineConfig.load(args.config) if getattr(args, "config", None) else PipelineConfig()
    if getattr(args, "threads", None) is not None:
        cfg = replace(cfg, threads=args.threads)
    return cfg


def _apply_overrides(cfg, args):
    """Fold explicit flags into the config; unspecified flags keep config values."""
    g = lambda name: getattr(args, name, None)  # noqa: E731
    svd = cfg.svd
    if g("rel_threshold") is not None:
        svd = replace(svd, rel_threshold=args.rel_threshold)
    if g("keep_smallest"):
        svd = replace(svd, drop_smallest=False)
    pre = cfg.preprocess
    if g("interp") is not None:
        pre = replace(pre, factor_y=args.interp[0], factor_x=args.interp[1])
    if g("interp_method") is not None:
        pre = replace(pre, method=args.interp_method)
    if g("smooth_um") is not None:
        pre = replace(pre, smooth_sigma=args.smooth_um * 1e-6)
    loc = cfg.localize
    for flag, fieldname, scale in (
        ("h", "h", 1.0), ("mode", "mode", None), ("connectivity", "connectivity", None),
        ("psf_um", "psf_sigma", 1e-6), ("retention", "retention_fraction", 1.0),
        ("region_floor", "region_floor", 1.0), ("baseline_threshold", "baseline_threshold", 1.0),
    ):
        v = g(flag)
        if v is not None:
            loc = replace(loc, **{fieldname: v * scale if scale else v})
    changes = dict(svd=svd, preprocess=pre, localize=loc)
    if g("baseline"):
        changes["method"] = "baseline"
    if g("sigma_um") is not None:
        changes["render_sigma"] = args.sigma_um * 1e-6
    if g("tolerances_um") is not None:
        changes["tolerances"] = tuple(t * 1e-6 for t in args.tolerances_um)
    if g("noise_rel") is not None:
        changes["noise_rel"] = args.noise_rel
    if g("seed") is not None:
        changes["seed"] = args.seed
    if g("input") is not None:
        changes["input"] = str(args.input)
    if g("mask") is not None and args.command == "run":
        changes["mask"] = str(args.mask)
    if g("out_dir") is not None:
        changes["output_dir"] = str(args.out_dir)
    if g("persist_intermediates"):
        changes["persist_intermediates"] = True
    return replace(cfg, **changes)


# ---------------------------------------------------------------- commands


def cmd_synth(args, cfg) -> int:
    from .synth import PhantomSpec, default_phantom_spec, generate_phantom

    spec = PhantomSpec.load(args.spec) if args.spec else default_phantom_spec()
    changes = {}
    if args.nframes is not None:
        changes["nframes"] = args.nframes
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.noise_rel is not None:
        changes["noise_rel"] = args.noise_rel
    if changes:
        spec = replace(spec, **changes)
    stack, truth = generate_phantom(spec)
    save_stack(stack, args.out)
    if args.truth:
        truth.write_csv(args.truth)
    if args.mask:
        save_mask(truth.mask, args.mask)
    if args.write_spec:
        spec.save(args.write_spec)
    log.info("wrote %d frames, %d bubble instances", stack.nframes, truth.frame.size)
    return 0


def cmd_filter(args, cfg) -> int:
    from .evaluate import add_noise
    from .pipeline import filter_stack

    stack = load_stack(args.input)
    if cfg.noise_rel > 0:
        stack = add_noise(stack, cfg.noise_rel, cfg.seed)
    save_stack(filter_stack(stack, cfg.svd), args.out)
    return 0


def cmd_preprocess(args, cfg) -> int:
    from .preprocess import preprocess_frame

    stack = load_stack(args.input)
    frames = [preprocess_frame(f, cfg.preprocess) for f in stack.frames]
    out = FrameStack(frames[0].geometry, np.stack([f.data for f in frames]).astype(np.float32))
    save_stack(out, args.out)
    return 0


def cmd_hdome(args, cfg) -> int:
    from .morphology import hdome

    loc = cfg.localize
    h = args.h if args.h is not None else loc.h
    mode = args.mode or loc.mode
    conn = args.connectivity or loc.connectivity
    stack = load_stack(args.input)
    domes = [hdome(f, h, mode, conn).data for f in stack.frames]
    save_stack(stack.with_data(np.stack(domes).astype(np.float32)), args.out)
    return 0


def cmd_localize(args, cfg) -> int:
    from .pipeline import localize_stack, write_peaks_csv
    from .preprocess import PreprocessConfig

    stack = load_stack(args.input)
    pre = cfg.preprocess
    if args.preprocessed:
        pre = PreprocessConfig(1, 1, 0.0, pre.method)
    per_frame = localize_stack(stack, pre, cfg.localize, cfg.method, cfg.threads)
    flat = [l for f in per_frame for l in f]
    write_peaks_csv(flat, args.out)
    log.info("%d localizations in %d frames", len(flat), stack.nframes)
    return 0


def cmd_render(args, cfg) -> int:
    from .pipeline import read_peaks_csv, sr_geometry
    from .render import accumulate_sr, line_profile, max_intensity_projection, write_pgm, write_profile_csv

    like = load_stack(args.like)
    locs = read_peaks_csv(args.peaks)
    sr = accumulate_sr(locs, sr_geometry(like, cfg.preprocess), cfg.render_sigma, args.amplitude_weighted)
    save_stack(FrameStack(sr.geometry, sr.data[None].astype(np.float32)), args.out)
    if args.pgm:
        write_pgm(sr, args.pgm)
    if args.mip:
        write_pgm(max_intensity_projection(like), args.mip)
    if args.profile is not None:
        if len(args.profile) != 4:
            raise ConfigError("--profile needs y0,x0,y1,x1")
        prof = line_profile(sr, args.profile[:2], args.profile[2:], args.profile_samples)
        write_profile_csv(prof, args.profile_out or args.out.with_suffix(".profile.csv"))
    if args.figure:
        from .figures import save_image

        save_image(sr, args.figure, f"SR image, {sr.n_localizations} localizations")
    return 0


def cmd_evaluate(args, cfg) -> int:
    from .evaluate import cnr_report, in_vessel_fraction, upper_bound
    from .pipeline import read_peaks_csv

    locs = read_peaks_csv(args.peaks)
    report = {"n_localizations": len(locs)}
    if args.mask:
        mask = load_mask(args.mask)
        report["accuracy"] = in_vessel_fraction(locs, mask, cfg.tolerances).to_dict()
        report["upper_bound_per_frame"] = upper_bound(mask)
        frames = {l.frame_index for l in locs}
        if frames:
            report["localizations_per_frame"] = len(locs) / (max(frames) + 1)
    if args.image is not None:
        if not args.roi or args.bg is None:
            raise ConfigError("CNR needs at least one --roi and a --bg box")
        image = load_stack(args.image).frame(0)
        rois = {f"roi{k}": box for k, box in enumerate(args.roi)}
        report["cnr"] = cnr_report(image, rois, args.bg).to_dict()
    args.report.write_text(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_track(args, cfg) -> int:
    from .pipeline import read_peaks_csv
    from .track import track_localizations, write_velocities_csv

    locs = read_peaks_csv(args.peaks)
    vecs = track_localizations(locs, args.dt_ms * 1e-3, args.max_disp_um * 1e-6)
    write_velocities_csv(vecs, args.out)
    if vecs:
        sp = np.array([v.speed for v in vecs])
        log.info("%d vectors, median speed %.4g m/s", len(vecs), float(np.median(sp)))
    return 0


def cmd_run(args, cfg) -> int:
    from .pipeline import filter_stack, run_pipeline

    if args.write_config:
        args.write_config.write_text(cfg.dumps())
        return 0
    result = run_pipeline(cfg)
    if cfg.output_dir:
        out = Path(cfg.output_dir)
        (out / "config.json").write_text(cfg.dumps())
        if args.figures:
            from .figures import save_image
            from .render import max_intensity_projection

            save_image(result.sr, out / "sr.png", f"SR image, {result.sr.n_localizations} localizations")
            stack = load_stack(cfg.input)
            save_image(max_intensity_projection(filter_stack(stack, cfg.svd)), out / "mip.png",
                       "Maximum intensity projection")
    print(json.dumps({k: v for k, v in result.report.items() if k != "config"}, indent=2, sort_keys=True))
    return 0


def _write_rows(fh, fields, rows) -> None:
    writer = csv.DictWriter(fh, fields)
    writer.writeheader()
    for r in rows:
        writer.writerow(r.to_dict())


def cmd_bench(args, cfg) -> int:
    from .bench import bench, bench_geometry_stack, bench_reconstruction

    if args.input:
        stack = load_stack(args.input)
    else:
        stack = bench_geometry_stack(GridGeometry(*args.shape), args.nframes, cfg.seed)
    rows = bench(cfg, stack, args.factors, args.h_values, args.repeats, not args.no_baseline)
    recon = bench_reconstruction() if args.reconstruction else None
    fields = list(rows[0].to_dict())
    if args.out is None:
        _write_rows(sys.stdout, fields, rows)
    else:
        with open(args.out, "w", newline="") as fh:
            _write_rows(fh, fields, rows)
    if recon is not None:
        log.warning("reconstruction %dx%d: naive %.2f ms, fast %.2f ms, speedup %.1fx, identical=%s",
                    recon.size, recon.size, recon.naive_ms, recon.fast_ms, recon.speedup, recon.identical)
    if args.json:
        args.json.write_text(json.dumps({"rows": [r.to_dict() for r in rows],
                                         "reconstruction": recon.to_dict() if recon else None}, indent=2))
    if args.figure:
        from .figures import save_bench

        save_bench(rows, args.figure)
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "filter": cmd_filter,
    "preprocess": cmd_preprocess,
    "hdome": cmd_hdome,
    "localize": cmd_localize,
    "render": cmd_render,
    "evaluate": cmd_evaluate,
    "track": cmd_track,
    "run": cmd_run,
    "bench": cmd_bench,
}


def _exit_code(exc: BaseException) -> int:
    code = getattr(exc, "exit_code", None)
    if code is not None:
        return int(code)
    if isinstance(exc, (ConfigError, argparse.ArgumentTypeError)):
        return 2
    if isinstance(exc, (DataError, OSError)):
        return 3
    if isinstance(exc, (NumericalError, ArithmeticError, np.linalg.LinAlgError)):
        return 4
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_overrides(_load_config(args), args)
        return COMMANDS[args.command](args, cfg)
    except Exception as exc:  # noqa: BLE001
        code = _exit_code(exc)
        if code == 1:
            raise
        print(f"mrloc {args.command}: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
