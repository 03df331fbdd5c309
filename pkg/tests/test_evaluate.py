import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mrloc.errors import DataError
from mrloc.grid import FrameStack, GridGeometry, mask_from_image
from mrloc.evaluate import (
    add_noise,
    cnr,
    cnr_linear,
    cnr_report,
    in_vessel_fraction,
    resolved_maxima,
    sample_distance,
    to_db,
    upper_bound,
)
from mrloc.localize import Localization


def loc(y, x):
    return Localization(0, y, x, 1.0, 0.0)


def test_cnr_by_hand():
    img = np.array([[10.0, 10.0, 1.0, 3.0], [0.0, 0.0, 2.0, 2.0]])
    roi = np.zeros_like(img, bool)
    roi[0, :2] = True
    bg = (0, 2, 2, 4)  # box holding 1, 3, 2, 2
    # mean 2, sample sd sqrt(2/3)
    expected = 8.0 / math.sqrt(2.0 / 3.0)
    assert cnr_linear(img, roi, bg) == pytest.approx(expected)
    assert cnr(img, roi, bg) == pytest.approx(20 * math.log10(expected))


def test_cnr_nonpositive_is_minus_inf():
    img = np.array([[0.0, 1.0, 3.0]])
    assert cnr(img, (np.array([0]), np.array([0])), (np.array([0, 0]), np.array([1, 2]))) == -math.inf
    assert to_db(0.0) == -math.inf


def test_cnr_errors():
    img = np.ones((3, 3))
    with pytest.raises(DataError):
        cnr_linear(img, (0, 1, 0, 1), (1, 3, 1, 3))  # zero sd
    with pytest.raises(DataError):
        cnr_linear(np.arange(9.0).reshape(3, 3), (0, 0, 0, 0), (1, 3, 1, 3))
    with pytest.raises(DataError):
        cnr_linear(img, (0, 1, 0, 1), (0, 1, 0, 1))
    with pytest.raises(DataError):
        cnr_linear(img, np.zeros((3, 3, 3)), (0, 1, 0, 1))


@given(hnp.arrays(np.float64, (6, 6), elements=st.floats(-10, 10)), st.floats(0.1, 100), st.floats(-5, 5))
def test_cnr_affine_invariant(img, scale, shift):
    roi, bg = (0, 2, 0, 6), (2, 6, 0, 6)
    bgpx = img[2:6]
    if bgpx.std() < 1e-6:
        return
    a = cnr_linear(img, roi, bg)
    b = cnr_linear(img * scale + shift, roi, bg)
    assert b == pytest.approx(a, rel=1e-7, abs=1e-9)


def test_cnr_report_summary():
    img = np.array([[5.0, 0.0, 1.0, 0.5, 0.2]])
    rois = {"bright": (np.array([0]), np.array([0])), "dark": (np.array([0]), np.array([1]))}
    rep = cnr_report(img, rois, (0, 1, 2, 5))
    assert rep.summary["n"] == 2 and rep.summary["n_nonpositive"] == 1
    d = rep.to_dict()
    assert d["db"][1] is None and d["names"] == ["bright", "dark"]


def test_upper_bound_whole_frame():
    g = GridGeometry(312, 180)
    m = mask_from_image(np.ones(g.shape, bool), g)
    # 312 * 180 pixels of 60 x 30 um over (60 um)^2
    assert upper_bound(m) == pytest.approx(28080.0)
    assert upper_bound(m, 30e-6) == pytest.approx(4 * 28080.0)


def test_in_vessel_fraction():
    g = GridGeometry(10, 10, dy=10e-6, dx=10e-6)
    bits = np.zeros(g.shape, bool)
    bits[:, 2] = True
    m = mask_from_image(bits, g)
    locs = [loc(50e-6, 20e-6), loc(50e-6, 24e-6), loc(50e-6, 35e-6), loc(50e-6, 90e-6)]
    rep = in_vessel_fraction(locs, m, (0.0, 20e-6, 50e-6))
    assert rep.n_total == 4
    assert rep.n_within == [2, 3, 3]
    assert rep.fraction_within == [0.5, 0.75, 0.75]
    empty = in_vessel_fraction([], m)
    assert empty.undefined and empty.to_dict()["fraction_within"] == [None, None, None]


def test_sample_distance_interpolates():
    g = GridGeometry(5, 5, dy=1e-6, dx=1e-6)
    bits = np.zeros(g.shape, bool)
    bits[:, 0] = True
    d = sample_distance(mask_from_image(bits, g), np.array([2e-6]), np.array([2.5e-6]))
    assert d[0] == pytest.approx(2.5e-6)


@given(st.lists(st.tuples(st.floats(0, 90e-6), st.floats(0, 90e-6)), min_size=1, max_size=20))
def test_fraction_monotone_in_tolerance(pts):
    g = GridGeometry(10, 10, dy=10e-6, dx=10e-6)
    bits = np.zeros(g.shape, bool)
    bits[4:6, 3:7] = True
    rep = in_vessel_fraction([loc(y, x) for y, x in pts], mask_from_image(bits, g), (0, 5e-6, 20e-6, 1.0))
    assert rep.n_within == sorted(rep.n_within)
    assert rep.fraction_within[-1] == 1.0


def test_add_noise():
    s = FrameStack(GridGeometry(8, 8), np.full((4, 8, 8), 2.0, np.float32))
    assert add_noise(s, 0.0) is s
    a, b = add_noise(s, 0.5, seed=1), add_noise(s, 0.5, seed=1)
    assert np.array_equal(a.data, b.data) and a.data.dtype == np.float32
    assert a.data.min() >= 0.0
    assert float(np.std(a.data)) == pytest.approx(1.0, rel=0.2)
    with pytest.raises(DataError):
        add_noise(s, -1.0)


def test_resolved_maxima_cases():
    assert resolved_maxima([0, 1, 0, 1, 0]) == [1, 3]
    assert resolved_maxima([0, 1, 0.8, 1, 0]) == [1]
    assert resolved_maxima([0, 1, 0.2, 0.5, 0]) == [1, 3]
    assert resolved_maxima([0, 1, 0.3, 0.5, 0]) == [1]
    assert resolved_maxima([0, 2, 2, 2, 0]) == [1]
    assert resolved_maxima([0, 0, 0]) == []
    with pytest.raises(DataError):
        resolved_maxima([])


def test_resolved_maxima_two_gaussians():
    x = np.linspace(-3, 3, 301)
    far = np.exp(-((x - 1) ** 2) / 0.1) + np.exp(-((x + 1) ** 2) / 0.1)
    near = np.exp(-((x - 0.2) ** 2) / 0.1) + np.exp(-((x + 0.2) ** 2) / 0.1)
    assert len(resolved_maxima(far)) == 2
    assert len(resolved_maxima(near)) == 1
