"""Deterministic SVG line plots (no timestamps, fixed element ids)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "aop-lab"
matplotlib.rcParams["svg.fonttype"] = "none"


def line_plot(path, series, xlabel: str, ylabel: str, title: str = "") -> None:
    """``series`` is a list of ``(label, xs, ys)``."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, xs, ys in series:
        ax.plot(list(xs), list(ys), marker="o" if len(list(xs)) < 30 else None, markersize=3, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if series:
        ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
