"""Spatiotemporal SVD clutter filter.

The stack is arranged as a Casorati matrix (pixels x frames). Static tissue
concentrates in the leading singular values; those above a fraction of the
largest one are zeroed together with the smallest, which mostly carries noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, NumericalError
from .grid import FrameStack


@dataclass(frozen=True)
class SvdFilterConfig:
    rel_threshold: float = 0.10
    drop_smallest: bool = True

    def __post_init__(self):
        if not 0.0 < self.rel_threshold < 1.0:
            raise ConfigError(f"rel_threshold must be in (0, 1), got {self.rel_threshold}")


def casorati(stack: FrameStack) -> np.ndarray:
    """Return the ``(ny*nx, nframes)`` matrix whose column t is frame t
    flattened row-major."""
    if stack.nframes < 2:
        raise DataError("SVD filtering needs at least 2 frames")
    return stack.data.reshape(stack.nframes, -1).T


def from_casorati(matrix: np.ndarray, like: FrameStack) -> FrameStack:
    """Inverse of :func:`casorati`."""
    g = like.geometry
    data = np.ascontiguousarray(matrix.T).reshape(matrix.shape[1], g.ny, g.nx)
    return FrameStack(g, data)


def temporal_singular_vectors(stack: FrameStack):
    """Singular values (descending) and right singular vectors of the
    Casorati matrix.

    Computed from the eigendecomposition of the ``nframes x nframes`` Gram
    matrix, so memory stays linear in the stack size.

    Returns
    -------
    sigma : ndarray, shape (nframes,)
    vectors : ndarray, shape (nframes, nframes)
        Column i is the temporal singular vector of ``sigma[i]``.
    """
    x = casorati(stack).astype(np.float64, copy=False)
    if not np.all(np.isfinite(x)):
        raise DataError("stack contains non-finite values")
    gram = x.T @ x
    try:
        evals, evecs = np.linalg.eigh(gram)
    except np.linalg.LinAlgError as exc:
        cond = np.linalg.cond(gram) if np.all(np.isfinite(gram)) else float("inf")
        raise NumericalError(
            f"SVD of the {x.shape[0]}x{x.shape[1]} Casorati matrix did not converge "
            f"(Gram condition number {cond:.3g}, Frobenius norm {np.linalg.norm(x):.3g})"
        ) from exc
    order = np.argsort(evals, kind="stable")[::-1]
    sigma = np.sqrt(np.clip(evals[order], 0.0, None))
    return sigma, evecs[:, order]


def project_temporal(stack: FrameStack, keep: np.ndarray, vectors: np.ndarray) -> FrameStack:
    """Reconstruct the stack from the temporal components flagged in ``keep``.

    The output keeps the input dtype.
    """
    x = casorati(stack).astype(np.float64, copy=False)
    keep = np.asarray(keep, dtype=bool)
    if keep.all():
        y = x @ (vectors @ vectors.T)
    elif keep.sum() <= (~keep).sum():
        vk = vectors[:, keep]
        y = (x @ vk) @ vk.T
    else:
        vr = vectors[:, ~keep]
        y = x - (x @ vr) @ vr.T
    return from_casorati(y.astype(stack.data.dtype, copy=False), stack)


def clutter_keep_mask(sigma: np.ndarray, cfg: SvdFilterConfig) -> np.ndarray:
    """Which singular components survive the filter."""
    keep = ~(sigma > cfg.rel_threshold * sigma[0])
    if cfg.drop_smallest:
        keep[-1] = False
    return keep


def svd_clutter_filter(stack: FrameStack, cfg: SvdFilterConfig = SvdFilterConfig()) -> FrameStack:
    """Remove tissue clutter from ``stack``.

    Every singular value strictly greater than ``cfg.rel_threshold`` times the
    largest is zeroed (so the largest always goes), plus the last one when
    ``cfg.drop_smallest`` is set. Negative output values are kept.
    """
    sigma, vectors = temporal_singular_vectors(stack)
    keep = clutter_keep_mask(sigma, cfg)
    return project_temporal(stack, keep, vectors)
