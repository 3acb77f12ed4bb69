"""Figures written next to the CLI's map and CSV outputs.

Everything renders off-screen with the Agg backend and is saved to a file;
nothing here opens a window.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evalkit import RocPoint  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_roc(points: Sequence[RocPoint], path: str | Path, title: str = "confidence ROC") -> Path:
    """Normalized mL1-rel and density over the confidence threshold."""
    t = np.array([p.threshold for p in points])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        ax.plot(t, [p.mL1_rel_normalized for p in points], "o-", color="tab:blue", ms=3,
                label="mL1-rel / density")
        ax.set_xlabel("confidence threshold")
        ax.set_ylabel("normalized mL1-rel")
        ax.set_xlim(0.0, 1.0)
        ax.set_title(title)
        twin = ax.twinx()
        twin.plot(t, [p.density for p in points], "s--", color="tab:orange", ms=3, label="density")
        twin.set_ylabel("density")
        twin.set_ylim(0.0, 1.05)
        handles = ax.get_legend_handles_labels()[0] + twin.get_legend_handles_labels()[0]
        ax.legend(handles, [h.get_label() for h in handles], loc="upper center")
        return _save(fig, path)


def plot_map(
    values: np.ndarray,
    path: str | Path,
    title: str = "",
    cmap: str = "viridis",
    label: str = "",
    vmin: float | None = None,
    vmax: float | None = None,
) -> Path:
    """Scalar map with invalid (NaN) pixels shown in grey."""
    arr = np.asarray(values, dtype=np.float64)
    cm = plt.get_cmap(cmap).copy()
    cm.set_bad("0.6")
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 5.0 * arr.shape[0] / max(arr.shape[1], 1) + 0.4))
        im = ax.imshow(np.ma.masked_invalid(arr), cmap=cm, vmin=vmin, vmax=vmax, interpolation="nearest")
        ax.set_axis_off()
        if title:
            ax.set_title(title)
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04, label=label)
        return _save(fig, path)


def plot_normals(normals: np.ndarray, path: str | Path, title: str = "normals") -> Path:
    """Normal map as RGB, ``(n + 1) / 2`` per channel; invalid pixels black."""
    n = np.asarray(normals, dtype=np.float64)
    rgb = np.clip((n + 1.0) / 2.0, 0.0, 1.0)
    rgb[~np.all(np.isfinite(n), axis=-1)] = 0.0
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 5.0 * n.shape[0] / max(n.shape[1], 1)))
        ax.imshow(rgb, interpolation="nearest")
        ax.set_axis_off()
        ax.set_title(title)
        return _save(fig, path)


def plot_estimate(depth: np.ndarray, normals: np.ndarray, confidence: np.ndarray, out_dir: str | Path) -> list[Path]:
    """The three estimate figures written by ``sweepsgm estimate``."""
    out = Path(out_dir)
    return [
        plot_map(depth, out / "depth.png", "depth", "magma_r", "depth"),
        plot_normals(normals, out / "normals.png"),
        plot_map(confidence, out / "confidence.png", "confidence", "viridis", "C", 0.0, 1.0),
    ]


def plot_scaling(threads: Sequence[int], seconds: Sequence[float], path: str | Path) -> Path:
    """Seconds per bundle and parallel efficiency over the thread count."""
    n = np.asarray(threads, dtype=float)
    s = np.asarray(seconds, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        ax.plot(n, s, "o-", color="tab:blue")
        ax.set_xlabel("threads")
        ax.set_ylabel("seconds per bundle")
        ax.set_xticks(n)
        twin = ax.twinx()
        twin.plot(n, s[0] / s / n, "s--", color="tab:orange")
        twin.set_ylabel("efficiency")
        twin.set_ylim(0.0, 1.1)
        ax.set_title("CPU throughput")
        return _save(fig, path)
