"""Optional SVG plots drawn from the CSV logs; skipped when matplotlib is absent."""
from __future__ import annotations

import logging
from pathlib import Path

log = logging.getLogger(__name__)


def _pyplot():
    try:
        import matplotlib
    except ImportError:
        log.info("matplotlib not installed; skipping plot")
        return None
    matplotlib.use("Agg")
    # Fixed salt and no date keep the SVG bytes reproducible.
    matplotlib.rcParams["svg.hashsalt"] = "didipose"
    import matplotlib.pyplot as plt
    return plt


def _save(fig, plt, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def line_plot(path, xs, series: dict, xlabel: str, ylabel: str, title: str = "") -> bool:
    plt = _pyplot()
    if plt is None:
        return False
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, ys in series.items():
        ax.plot(xs, ys, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend()
    fig.tight_layout()
    _save(fig, plt, path)
    return True


def bar_plot(path, labels, values, ylabel: str, title: str = "") -> bool:
    plt = _pyplot()
    if plt is None:
        return False
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(range(len(values)), values)
    ax.set_xticks(range(len(values)))
    ax.set_xticklabels(labels, rotation=30, ha="right")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, plt, path)
    return True
