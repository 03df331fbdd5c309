"""Independent reference implementations used only by the tests.

None of these share code with the package; each computes the same quantity
by a different (slow, obvious) route.
"""

import math

import numpy as np
from scipy import ndimage


def brute_dilate(a, offsets, weights):
    """Per-pixel maximum of ``a(r - r') + w(r')`` over in-bounds neighbours."""
    ny, nx = a.shape
    out = np.empty_like(a, dtype=np.float64)
    for r in range(ny):
        for c in range(nx):
            best = -math.inf
            for (dy, dx), w in zip(offsets, weights):
                rr, cc = r - dy, c - dx
                if 0 <= rr < ny and 0 <= cc < nx:
                    best = max(best, a[rr, cc] + w)
            out[r, c] = best
    return out


def brute_edt(bits, dy, dx):
    """Distance from every pixel to the nearest true pixel, all pairs."""
    ty, tx = np.nonzero(bits)
    ys, xs = np.mgrid[0 : bits.shape[0], 0 : bits.shape[1]]
    d = np.hypot((ys[..., None] - ty) * dy, (xs[..., None] - tx) * dx)
    return d.min(axis=-1)


def threshold_reconstruct(mask, marker, connectivity=8):
    """Flat reconstruction through threshold decomposition.

    At each grey level t the binary reconstruction keeps the connected
    components of ``{mask >= t}`` that touch ``{marker >= t}``; the result at
    a pixel is the highest level at which it survives.
    """
    structure = np.ones((3, 3), bool) if connectivity == 8 else ndimage.generate_binary_structure(2, 1)
    out = np.full(mask.shape, -np.inf)
    for t in np.unique(np.concatenate([mask.ravel(), marker.ravel()])):
        labels, n = ndimage.label(mask >= t, structure)
        if n == 0:
            continue
        seeds = np.unique(labels[(marker >= t) & (labels > 0)])
        keep = np.isin(labels, seeds[seeds > 0])
        out[keep] = np.maximum(out[keep], t)
    return out


def direct_svd_filter(stack, rel_threshold=0.10, drop_smallest=True):
    """Clutter filter through a full ``numpy.linalg.svd`` of the space-time matrix."""
    nt, ny, nx = stack.shape
    m = stack.reshape(nt, ny * nx).T.astype(np.float64)
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    keep = ~(s > rel_threshold * s[0])
    if drop_smallest:
        keep[-1] = False
    out = (u[:, keep] * s[keep]) @ vt[keep]
    return out.T.reshape(nt, ny, nx)


def dense_convolve(image, kernel):
    """Direct 2-D convolution with zero padding, no FFT, no separability."""
    ky, kx = kernel.shape
    py, px = ky // 2, kx // 2
    padded = np.pad(image, ((py, py), (px, px)))
    out = np.zeros_like(image, dtype=np.float64)
    for r in range(image.shape[0]):
        for c in range(image.shape[1]):
            out[r, c] = np.sum(padded[r : r + ky, c : c + kx] * kernel[::-1, ::-1])
    return out


def truncated_gaussian_2d(sigma_y_px, sigma_x_px, truncate=3.0):
    """Outer product of two unit-sum truncated 1-D Gaussians."""
    def one(s):
        r = int(math.floor(truncate * s))
        k = np.exp(-0.5 * (np.arange(-r, r + 1) / s) ** 2)
        return k / k.sum()

    return np.outer(one(sigma_y_px), one(sigma_x_px))


def gaussian_sum(points, y, x, sigma):
    """Sum of unit-peak isotropic Gaussians evaluated at ``(y, x)``."""
    total = 0.0
    for py, px in points:
        total += math.exp(-((y - py) ** 2 + (x - px) ** 2) / (2 * sigma**2))
    return total
