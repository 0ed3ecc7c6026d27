"""SVG figures written next to the CSV artifacts.

Figures are built on :class:`matplotlib.figure.Figure` directly (no
pyplot state), with a fixed hash salt and no date metadata so the same
data always produce the same SVG bytes.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import numpy as np
from matplotlib import rcParams
from matplotlib.figure import Figure

rcParams["svg.hashsalt"] = "earlylmc"
rcParams["svg.fonttype"] = "none"

_METADATA = {"Date": None, "Creator": "earlylmc"}


def _save(fig: Figure, path) -> Path:
    fig.savefig(path, format="svg", metadata=_METADATA)
    return Path(path)


def kde_overlay(curves: Sequence[tuple[str, np.ndarray, np.ndarray]], path, truth: Optional[tuple] = None,
                title: str = "", xlabel: str = "x") -> Path:
    """KDE curves (label, grid, density) over the exact density."""
    fig = Figure(figsize=(6.0, 3.6))
    ax = fig.add_subplot(111)
    if truth is not None:
        ax.fill_between(truth[0], truth[1], color="0.85", label="ground truth", lw=0)
    for label, x, y in curves:
        ax.plot(x, y, lw=1.4, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("density")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def trajectory_projection(states: np.ndarray, path, record_steps: Optional[np.ndarray] = None,
                          dims: tuple[int, int] = (0, 1), title: str = "",
                          reference: Optional[np.ndarray] = None) -> Path:
    """Chains projected on two coordinates: paths, start (o) and end (x).

    ``states`` has shape ``(n_chains, n_records, d)``; 1-D chains are drawn
    against the step index instead.
    """
    fig = Figure(figsize=(5.0, 4.2))
    ax = fig.add_subplot(111)
    n, r, d = states.shape
    if reference is not None and d >= 2:
        ax.scatter(reference[:, dims[0]], reference[:, dims[1]], s=2, color="0.8", lw=0, label="ground truth")
    for c in range(n):
        if d >= 2:
            xs, ys = states[c, :, dims[0]], states[c, :, dims[1]]
        else:
            xs = np.arange(r) if record_steps is None else record_steps
            ys = states[c, :, 0]
        ax.plot(xs, ys, lw=0.6, alpha=0.7)
        if d >= 2:
            ax.plot(xs[0], ys[0], "o", ms=3, color="k")
            ax.plot(xs[-1], ys[-1], "x", ms=4, color="C3")
    if d >= 2:
        ax.set_xlabel(f"x_{dims[0]}")
        ax.set_ylabel(f"x_{dims[1]}")
    else:
        ax.set_xlabel("step")
        ax.set_ylabel("x_0")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def loss_curve(curve: np.ndarray, path, window: int = 100, title: str = "training loss") -> Path:
    fig = Figure(figsize=(6.0, 3.4))
    ax = fig.add_subplot(111)
    c = np.asarray(curve, dtype=float)
    ax.plot(np.arange(c.size), c, lw=0.5, color="0.6", label="loss")
    if c.size >= window:
        ma = np.convolve(c, np.ones(window) / window, mode="valid")
        ax.plot(np.arange(window - 1, c.size), ma, lw=1.2, color="C0", label=f"{window}-step mean")
    ax.set_xlabel("step")
    ax.set_ylabel("objective")
    ax.set_title(title)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    return _save(fig, path)
