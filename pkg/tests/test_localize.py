import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrloc.errors import ConfigError
from mrloc.grid import Frame, GridGeometry
from mrloc.localize import (
    LocalizeConfig,
    Localization,
    PeakRegion,
    baseline_regions,
    localize_frame,
    retain_peaks,
    segment_regions,
    superlocalize,
    threshold_baseline,
)
from mrloc.morphology import hdome

G = GridGeometry(60, 80, dy=5e-6, dx=5e-6)
YS, XS = np.mgrid[0:60, 0:80].astype(float)


def blob(cy, cx, amp=1.0, sy=4.0, sx=4.0):
    return amp * np.exp(-((YS - cy) ** 2 / (2 * sy**2) + (XS - cx) ** 2 / (2 * sx**2)))


def region(peak):
    return PeakRegion(np.array([0]), np.array([0]), 1, 0.0, peak, (0.0, 0.0), 0.0)


@pytest.mark.parametrize("kw", [dict(h=0.0), dict(h=1.0), dict(retention_fraction=1.0), dict(psf_sigma=0.0),
                                dict(connectivity=6), dict(mode="bogus"), dict(baseline_threshold=0.0)])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        LocalizeConfig(**kw)


def test_blank_frame_gives_nothing():
    f = Frame(G, np.zeros(G.shape))
    assert localize_frame(f) == [] and threshold_baseline(f) == []


@pytest.mark.parametrize("cy,cx", [(30.3, 40.7), (25.5, 33.25), (31.0, 41.0), (12.8, 60.1)])
def test_single_bump_subpixel(cy, cx):
    (loc,) = localize_frame(Frame(G, blob(cy, cx)), frame_index=7)
    assert loc.frame_index == 7
    assert abs(loc.y / G.dy - cy) < 0.05 and abs(loc.x / G.dx - cx) < 0.05


def test_dim_peak_found_by_mr_not_baseline():
    f = Frame(G, blob(30, 20) + blob(30, 60, 0.2))
    mr = sorted(localize_frame(f), key=lambda l: l.x)
    assert len(mr) == 2
    assert mr[1].x / G.dx == pytest.approx(60, abs=0.05)
    assert len(threshold_baseline(f)) == 1


def test_retention_fraction():
    regions = [region(1.0), region(0.91), region(0.89)]
    kept = retain_peaks(regions, LocalizeConfig(retention_fraction=0.1))
    assert [r.peak_value for r in kept] == [1.0, 0.91]
    assert retain_peaks([]) == []


def test_region_floor_splits_support():
    f = Frame(G, blob(30, 30) + blob(30, 50))
    dome = hdome(f, 0.05)
    assert len(segment_regions(dome, LocalizeConfig(region_floor=0.5))) >= 1
    loose = segment_regions(dome, LocalizeConfig(region_floor=0.01))
    tight = segment_regions(dome, LocalizeConfig(region_floor=0.9))
    assert sum(r.area_px for r in tight) < sum(r.area_px for r in loose)


def test_regions_ordered_by_first_row_then_column():
    f = Frame(G, blob(40, 10) + blob(10, 60) + blob(10, 20))
    regs = segment_regions(hdome(f, 0.05))
    keys = [(int(r.rows.min()), int(r.cols.min())) for r in regs]
    assert keys == sorted(keys) and len(regs) == 3


def test_orientation_and_area():
    along_x = segment_regions(hdome(Frame(G, blob(30, 40, sy=3, sx=10)), 0.05))[0]
    along_y = segment_regions(hdome(Frame(G, blob(30, 40, sy=10, sx=3)), 0.05))[0]
    assert along_x.orientation_rad == pytest.approx(0.0, abs=1e-9)
    assert along_y.orientation_rad == pytest.approx(np.pi / 2, abs=1e-9)
    assert along_x.area_wavelengths2 == pytest.approx(along_x.area_px * 25e-12 / 60e-6**2)


def test_single_pixel_region_is_pixel_centre():
    a = np.zeros(G.shape)
    a[10, 11] = 1.0
    (loc,) = localize_frame(Frame(G, a))
    assert (loc.y, loc.x) == (10 * G.dy, 11 * G.dx)


def test_plateau_tie_goes_to_centroid():
    a = np.zeros(G.shape)
    a[20:23, 30:33] = 1.0
    (loc,) = localize_frame(Frame(G, a))
    assert loc.y == pytest.approx(21 * G.dy, abs=1e-12) and loc.x == pytest.approx(31 * G.dx, abs=1e-12)


def test_baseline_threshold_support():
    f = Frame(G, blob(30, 40))
    (reg,) = baseline_regions(f, LocalizeConfig(baseline_threshold=0.9))
    assert np.all(f.data[reg.rows, reg.cols] >= 0.9)


def test_localizations_are_plain_records():
    loc = Localization(0, 1e-6, 2e-6, 0.5, 0.1)
    assert loc.orientation_rad == 0.0
    with pytest.raises(AttributeError):
        loc.y = 3.0


@settings(max_examples=30)
@given(st.lists(st.tuples(st.floats(8, 52), st.floats(8, 72), st.floats(0.2, 1.0)), min_size=1, max_size=5))
def test_localizations_stay_inside_region_box(bumps):
    f = Frame(G, sum(blob(cy, cx, a) for cy, cx, a in bumps))
    cfg = LocalizeConfig()
    regs = retain_peaks(segment_regions(hdome(f, cfg.h), cfg), cfg)
    for reg in regs:
        loc = superlocalize(reg, f, cfg)
        r0, r1, c0, c1 = reg.bbox
        # compared in metres: the refinement offset is clamped to exactly half a pixel
        assert (r0 - 0.5) * G.dy <= loc.y <= (r1 + 0.5) * G.dy
        assert (c0 - 0.5) * G.dx <= loc.x <= (c1 + 0.5) * G.dx
    assert len(localize_frame(f, cfg)) == len(regs)
