"""Grayscale report figures written with the non-interactive Agg backend."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _extent_mm(geometry):
    # pixel centres sit on the grid nodes, so pad half a pixel
    return (
        -0.5 * geometry.dx * 1e3,
        (geometry.width + 0.5 * geometry.dx) * 1e3,
        (geometry.height + 0.5 * geometry.dy) * 1e3,
        -0.5 * geometry.dy * 1e3,
    )


def save_image(image, path, title: str = "", gamma: float = 1.0, clip_percentile: float = 100.0) -> Path:
    """Save a grayscale image with millimetre axes.

    ``gamma`` and ``clip_percentile`` affect display only.
    """
    data = np.asarray(image.data, dtype=np.float64)
    top = np.percentile(data, clip_percentile) if data.size else 1.0
    shown = np.clip(data / top, 0, 1) if top > 0 else np.zeros_like(data)
    shown = shown ** gamma
    fig, ax = plt.subplots(figsize=(6, 6 * image.geometry.height / max(image.geometry.width, 1e-12) + 0.6))
    ax.imshow(shown, cmap="gray", extent=_extent_mm(image.geometry), interpolation="nearest", aspect="equal")
    ax.set_xlabel("x (mm)")
    ax.set_ylabel("y (mm)")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_profiles(profiles: Mapping[str, np.ndarray], path, title: str = "", normalize: bool = True) -> Path:
    """Overlay line profiles given as ``(n, 2)`` arrays of distance and value."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    styles = ["-", "--", ":", "-."]
    for k, (name, prof) in enumerate(profiles.items()):
        prof = np.asarray(prof)
        y = prof[:, 1]
        if normalize and y.max() > 0:
            y = y / y.max()
        ax.plot(prof[:, 0] * 1e6, y, styles[k % len(styles)], color="k", label=name)
    ax.set_xlabel("distance (um)")
    ax.set_ylabel("normalized intensity" if normalize else "intensity")
    ax.legend()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_bench(rows: Sequence, path) -> Path:
    """Per-frame time against interpolation factor, one line per method/h."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    series = {}
    for r in rows:
        key = "baseline" if r.method == "baseline" else f"MR h={r.h:g}"
        series.setdefault(key, []).append((r.factor, r.total_ms_mean, r.total_ms_std))
    markers = "osd^v<>"
    for k, (name, pts) in enumerate(sorted(series.items())):
        pts = sorted(pts)
        f, m, s = (np.array(v) for v in zip(*pts))
        ax.errorbar(f, m, yerr=s, marker=markers[k % len(markers)], color="k",
                    linestyle="--" if name == "baseline" else "-", capsize=3, label=name)
    ax.set_xlabel("interpolation factor")
    ax.set_ylabel("ms / frame")
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
