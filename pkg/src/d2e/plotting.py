"""Static SVG line plots. Output is byte-stable: fixed hash salt, no date stamp."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

Series = tuple[str, Sequence[float], Sequence[float]]


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "d2e"
    matplotlib.rcParams["svg.fonttype"] = "none"
    import matplotlib.pyplot as plt

    return plt


def line_plot(series: Sequence[Series], path, title: str = "", xlabel: str = "", ylabel: str = "", right: Sequence[Series] = (), right_label: str = "") -> Path:
    """Lines with markers; ``right`` series get an independent second y-axis."""
    if not series or any(len(xs) == 0 or len(xs) != len(ys) for _, xs, ys in list(series) + list(right)):
        raise ValueError("every series needs matching, non-empty x and y values")
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    handles = []
    for label, xs, ys in series:
        handles += ax.plot(list(xs), list(ys), marker="o", label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if right:
        twin = ax.twinx()
        for k, (label, xs, ys) in enumerate(right):
            handles += twin.plot(list(xs), list(ys), marker="s", linestyle="--", color=f"C{len(series) + k}", label=label)
        twin.set_ylabel(right_label)
    ax.legend(handles=handles, labels=[h.get_label() for h in handles], loc="best")
    ax.set_title(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
