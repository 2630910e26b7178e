"""Report figures rendered straight to files.

Figures are built on ``matplotlib.figure.Figure`` with the Agg canvas, so no
GUI backend or global pyplot state is touched.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .fileio import false_color

STYLE = {"figsize": (5.0, 3.2), "dpi": 120}


def _new_figure(ncols: int = 1, width: float | None = None):
    w = width or STYLE["figsize"][0]
    fig = Figure(figsize=(w, STYLE["figsize"][1]), dpi=STYLE["dpi"])
    FigureCanvasAgg(fig)
    axes = fig.subplots(1, ncols, squeeze=False)[0]
    return fig, axes


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path)
    return path


def plot_loss_curve(history, path, terms: bool = True) -> Path:
    """Total loss (and each recorded term) against iteration on a log scale.

    ``history`` is the list of records produced by training: dicts with an
    ``iteration`` key, a ``loss`` key and one key per loss term.
    """
    if not history:
        raise ValueError("empty loss history")
    fig, (ax,) = _new_figure()
    it = np.array([r["iteration"] for r in history])
    keys = ["loss"] + ([k for k in history[0] if k not in ("iteration", "loss")] if terms else [])
    for key in keys:
        y = np.array([r[key] for r in history], dtype=float)
        # non-positive values cannot sit on a log axis
        y = np.where(y > 0, y, np.nan)
        if np.isfinite(y).any():
            ax.plot(it, y, lw=1.6 if key == "loss" else 0.9, label=key)
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("value")
    ax.legend(fontsize=7, frameon=False)
    return _save(fig, path)


def plot_band_psnr(per_band: dict, path) -> Path:
    """One PSNR-per-band line for each labelled series (e.g. observed, TNN, recovered)."""
    if not per_band:
        raise ValueError("nothing to plot")
    fig, (ax,) = _new_figure()
    for label, values in per_band.items():
        values = np.asarray(values, dtype=float)
        ax.plot(np.arange(1, values.size + 1), values, marker=".", ms=3, lw=1, label=label)
    ax.set_xlabel("band")
    ax.set_ylabel("PSNR (dB)")
    ax.legend(fontsize=7, frameon=False)
    return _save(fig, path)


def plot_false_color_panels(tensors: dict, path, bands=(70, 40, 10)) -> Path:
    """Side-by-side false-colour renderings of equally shaped tensors."""
    if not tensors:
        raise ValueError("nothing to plot")
    n = len(tensors)
    fig, axes = _new_figure(ncols=n, width=2.4 * n)
    for ax, (label, t) in zip(axes, tensors.items()):
        ax.imshow(false_color(t, bands), interpolation="nearest")
        ax.set_title(label, fontsize=8)
        ax.set_axis_off()
    return _save(fig, path)
