import numpy as np
from matplotlib import image as mpimg

from mrloc.bench import BenchReport
from mrloc.figures import save_bench, save_image, save_profiles
from mrloc.grid import Frame, GridGeometry


def is_gray(path):
    px = mpimg.imread(path)[..., :3]
    return np.allclose(px[..., 0], px[..., 1]) and np.allclose(px[..., 1], px[..., 2])


def test_image_is_grayscale(tmp_path):
    data = np.random.default_rng(0).random((20, 30))
    save_image(Frame(GridGeometry(20, 30), data), tmp_path / "a.png", "title", gamma=0.5, clip_percentile=99)
    assert is_gray(tmp_path / "a.png")
    save_image(Frame(GridGeometry(4, 4), np.zeros((4, 4))), tmp_path / "z.png")
    assert is_gray(tmp_path / "z.png")


def test_profiles_and_bench_are_grayscale(tmp_path):
    d = np.linspace(0, 1e-4, 50)
    save_profiles({"SR": np.column_stack([d, np.sin(d * 1e5) ** 2]),
                   "MIP": np.column_stack([d, np.ones_like(d)])}, tmp_path / "p.png", "profiles")
    assert is_gray(tmp_path / "p.png")
    rows = [BenchReport(m, f, h, 1, 0, 1, 0, 2.0 * f, 0.1, 5, 1, 3, 3, 10.0)
            for f in (1, 2) for m, h in (("mr", 0.05), ("baseline", None))]
    save_bench(rows, tmp_path / "b.png")
    assert is_gray(tmp_path / "b.png")
