"""Byte-stable SVG charts (fixed hash salt, no timestamps)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_RC = {"svg.hashsalt": "mocap2pose", "svg.fonttype": "none", "path.simplify": False}


def _save(fig, path: str | Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def box_plot_svg(path: str | Path, samples: Sequence, labels: Sequence[str], ylabel: str = "",
                 title: str = "", show_outliers: bool = False) -> None:
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(max(6.0, 0.18 * len(labels)), 4.0))
        if len(samples):
            ax.boxplot(list(samples), showfliers=show_outliers)
            ax.set_xticks(range(1, len(labels) + 1), labels, rotation=90, fontsize=5)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        fig.tight_layout()
        _save(fig, path)


def line_plot_svg(path: str | Path, series: dict[str, tuple[Sequence[float], Sequence[float]]],
                  xlabel: str = "", ylabel: str = "", title: str = "") -> None:
    """One line per entry of ``series`` (label -> (x, y))."""
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        for label, (x, y) in series.items():
            ax.plot(x, y, label=label)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        if series:
            ax.legend(fontsize=7)
        ax.grid(True, linewidth=0.3)
        fig.tight_layout()
        _save(fig, path)
