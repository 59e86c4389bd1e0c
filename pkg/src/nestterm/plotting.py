"""Static figures for corpus statistics and sweep reports."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .corpus import CorpusStats  # noqa: E402
from .eval import SweepResult  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.4,
    "savefig.bbox": "tight",
    "savefig.dpi": 150,
}


def figsize(scale=1.0):
    width = 5.5 * scale
    return width, width * (math.sqrt(5) - 1.0) / 2.0


def _save(fig, path):
    path = Path(path)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_length_distribution(stats: CorpusStats, path):
    lengths = list(stats.length_histogram)
    counts = [stats.length_histogram[n] for n in lengths]
    cumulative, acc = [], 0
    for c in counts:
        acc += c
        cumulative.append(acc / stats.num_terms)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize())
        ax.plot(lengths, counts, "r-o", ms=3, label="terms")
        ax.set_xlabel("term length")
        ax.set_ylabel("count")
        ax2 = ax.twinx()
        ax2.plot(lengths, cumulative, "b--", label="cumulative share")
        ax2.set_ylim(0, 1.02)
        ax2.grid(False)
        ax.legend(loc="center right")
        ax2.legend(loc="lower right")
        return _save(fig, path)


def plot_ratio_sweep(result: SweepResult, path):
    """P/R/F1 on the left axis, K-num / true-term / true-positive counts on the right."""
    xs = [p.value for p in result.points]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize())
        ax.plot(xs, [p.report.precision for p in result.points], label="Precision")
        ax.plot(xs, [p.report.recall for p in result.points], label="Recall")
        ax.plot(xs, [p.report.f1 for p in result.points], label="F1")
        ax.set_ylim(0, 1)
        ax.set_xlabel("term ratio")
        ax2 = ax.twinx()
        ax2.plot(xs, [p.K for p in result.points], color="purple", lw=2, label="K-num")
        ax2.plot(xs, [p.report.gold_count for p in result.points], color="cyan", lw=2, label="True-Term-num")
        ax2.plot(xs, [p.true_positive_count for p in result.points], color="green", lw=2, label="True Positive")
        ax2.grid(False)
        ax.legend(loc="lower left")
        ax2.legend(loc="lower right")
        return _save(fig, path)


def plot_length_sweep(result: SweepResult, path):
    xs = [p.value for p in result.points]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=figsize(1.6), sharey=True)
        for ax, name, get in ((axes[0], "Classifier", lambda p: p.classifier), (axes[1], "Ranker", lambda p: p.report)):
            ax.plot(xs, [get(p).precision for p in result.points], "-o", ms=3, label="Precision")
            ax.plot(xs, [get(p).recall for p in result.points], "-o", ms=3, label="Recall")
            ax.plot(xs, [get(p).f1 for p in result.points], "-o", ms=3, label="F1")
            ax.set_title(f"{name} on lengths")
            ax.set_xlabel("max span length")
        axes[0].legend()
        return _save(fig, path)


def plot_tp_distribution(dist: dict, path):
    xs, ys = list(dist), list(dist.values())
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize(0.8))
        ax.fill_between(xs, ys, color="tab:red", alpha=0.2)
        ax.plot(xs, ys, "k-")
        ax.set_xlabel("rank ratio")
        ax.set_ylabel("true positives")
        ax.set_ylim(bottom=0)
        return _save(fig, path)
