import json

import numpy as np
import pytest

import mrloc.pipeline as pipeline
from mrloc.errors import ConfigError, DataError
from mrloc.grid import FrameStack, GridGeometry, save_mask, save_stack
from mrloc.localize import Localization, LocalizeConfig
from mrloc.pipeline import (
    PipelineConfig,
    StageError,
    filter_stack,
    localize_stack,
    read_peaks_csv,
    run_pipeline,
    sha256_file,
    write_peaks_csv,
)
from mrloc.preprocess import PreprocessConfig
from mrloc.svd_filter import SvdFilterConfig
from mrloc.synth import default_phantom_spec, generate_phantom

FAST = PipelineConfig(preprocess=PreprocessConfig(4, 4))


@pytest.fixture(scope="module")
def phantom():
    return generate_phantom(default_phantom_spec(nframes=40, seed=0))


def test_config_validation():
    with pytest.raises(ConfigError):
        PipelineConfig(method="magic")
    with pytest.raises(ConfigError):
        PipelineConfig(threads=0)
    with pytest.raises(ConfigError):
        PipelineConfig(noise_rel=-1)
    with pytest.raises(ConfigError):
        PipelineConfig(render_sigma=0.0)


def test_config_roundtrip(tmp_path):
    cfg = PipelineConfig(SvdFilterConfig(0.2, False), PreprocessConfig(3, 5, 10e-6, "bilinear"),
                         LocalizeConfig(h=0.1, mode="multiplicative"), method="baseline",
                         render_sigma=5e-6, tolerances=(0, 1e-5), seed=4)
    assert PipelineConfig.from_dict(json.loads(cfg.dumps())) == cfg
    (tmp_path / "c.json").write_text(cfg.dumps())
    assert PipelineConfig.load(tmp_path / "c.json") == cfg


def test_config_rejects_unknown_and_bad_files(tmp_path):
    with pytest.raises(ConfigError, match="colour"):
        PipelineConfig.from_dict({"colour": "red"})
    with pytest.raises(ConfigError, match="hh"):
        PipelineConfig.from_dict({"localize": {"hh": 0.1}})
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"localize": {"h": 2.0}})
    with pytest.raises(ConfigError):
        PipelineConfig.load(tmp_path / "nope.json")
    (tmp_path / "bad.json").write_text("[")
    with pytest.raises(ConfigError):
        PipelineConfig.load(tmp_path / "bad.json")


def test_blank_stack_gives_empty_sr():
    stack = FrameStack(GridGeometry(12, 16), np.zeros((6, 12, 16), np.float32))
    res = run_pipeline(FAST, stack)
    assert res.report["n_localizations"] == 0
    assert not res.sr.data.any() and res.sr.data.shape == (48, 64)


def test_constant_stack_filters_to_zero():
    stack = FrameStack(GridGeometry(4, 4), np.full((5, 4, 4), 3.0, np.float32))
    assert not filter_stack(stack).data.any()


def test_filter_stack_range(phantom):
    out = filter_stack(phantom[0])
    assert out.data.dtype == np.float32
    assert out.data.min() == 0.0 and out.data.max() == 1.0


def test_threads_do_not_change_results(phantom):
    filtered = filter_stack(phantom[0])
    one = localize_stack(filtered, FAST.preprocess, FAST.localize, "mr", 1)
    three = localize_stack(filtered, FAST.preprocess, FAST.localize, "mr", 3)
    assert one == three
    with pytest.raises(ConfigError):
        localize_stack(filtered, method="nope")


def test_end_to_end_accuracy_and_outputs(phantom, tmp_path):
    stack, truth = phantom
    cfg = PipelineConfig(preprocess=PreprocessConfig(4, 4), output_dir=str(tmp_path / "o"),
                         persist_intermediates=True)
    res = run_pipeline(cfg, stack, truth.mask)
    acc = res.report["accuracy"]
    assert acc["fraction_within"][0] >= 0.9
    assert acc["n_within"] == sorted(acc["n_within"])
    out = tmp_path / "o"
    for name in ("peaks.csv", "sr.fst", "sr.pgm", "sr.json", "report.json", "timing.json", "filtered.fst"):
        assert (out / name).exists(), name
    assert len(read_peaks_csv(out / "peaks.csv")) == res.report["n_localizations"]
    assert "threads" not in res.report["config"]


def test_rerun_and_thread_count_byte_identical(phantom, tmp_path):
    stack, truth = phantom
    digests = []
    for k, threads in enumerate((1, 1, 4)):
        d = tmp_path / f"r{k}"
        save_stack(stack, tmp_path / "in.fst")
        save_mask(truth.mask, tmp_path / "mask.fst")
        cfg = PipelineConfig(preprocess=PreprocessConfig(4, 4), threads=threads, input=str(tmp_path / "in.fst"),
                             mask=str(tmp_path / "mask.fst"), output_dir=str(d))
        run_pipeline(cfg)
        digests.append({n: sha256_file(d / n) for n in ("peaks.csv", "sr.fst", "sr.pgm", "report.json")})
    assert digests[0] == digests[1] == digests[2]


def test_noise_is_seeded(phantom):
    stack, _ = phantom
    a = run_pipeline(PipelineConfig(preprocess=PreprocessConfig(2, 2), noise_rel=0.3, seed=5), stack)
    b = run_pipeline(PipelineConfig(preprocess=PreprocessConfig(2, 2), noise_rel=0.3, seed=5), stack)
    assert np.array_equal(a.sr.data, b.sr.data)


def test_stage_error_names_stage_and_frame(phantom, monkeypatch):
    def boom(frame, cfg, t):
        if t == 3:
            raise DataError("synthetic failure")
        return []

    monkeypatch.setattr(pipeline, "localize_frame", boom)
    with pytest.raises(StageError) as info:
        run_pipeline(FAST, phantom[0])
    assert info.value.stage == "localize" and info.value.frame == 3
    assert "frame 3" in str(info.value) and info.value.exit_code == 3


def test_missing_input():
    with pytest.raises(ConfigError):
        run_pipeline(PipelineConfig())


def test_peaks_csv_roundtrip_and_errors(tmp_path):
    locs = [Localization(0, 1.25e-4, 3.0e-5, 0.04, 0.5, 0.1), Localization(2, 1e-3, 2e-3, 0.05, 1.0, -1.2)]
    write_peaks_csv(locs, tmp_path / "p.csv")
    assert read_peaks_csv(tmp_path / "p.csv") == locs
    (tmp_path / "h.csv").write_text("a,b\n")
    with pytest.raises(DataError):
        read_peaks_csv(tmp_path / "h.csv")
    (tmp_path / "c.csv").write_text(pipeline.PEAKS_HEADER + "\n1,2,3\n")
    with pytest.raises(DataError, match=":2"):
        read_peaks_csv(tmp_path / "c.csv")
