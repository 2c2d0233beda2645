"""Figure rendering for evaluation output.

Everything draws through the Agg backend straight to files, so the
evaluate command can emit charts next to its CSV/JSON regardless of
display availability.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

from .evaluation import CoverageBuckets, MetricsRow, ProximityReport


def render_metrics_figure(rows: Sequence[MetricsRow], path: str | Path) -> Path:
    """Grouped bars of P/R/F1/A per detector run; undefined scores are
    drawn as zero-height bars."""
    path = Path(path)
    labels = [f"{row.detector}/{row.preset}" if row.preset else row.detector for row in rows]
    series = {
        "P": [row.scores.precision or 0.0 for row in rows],
        "R": [row.scores.recall or 0.0 for row in rows],
        "F1": [row.scores.f1 or 0.0 for row in rows],
        "A": [row.scores.accuracy for row in rows],
    }
    x = range(len(rows))
    width = 0.2
    fig, ax = plt.subplots(figsize=(max(6.0, 1.2 * len(rows) + 2), 4.0))
    for offset, (name, values) in enumerate(series.items()):
        ax.bar([i + (offset - 1.5) * width for i in x], values, width, label=name)
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels, rotation=30, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("score")
    ax.set_title("Detector metrics")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_coverage_figure(buckets: CoverageBuckets, path: str | Path) -> Path:
    path = Path(path)
    names = [">=1 member", "all members", ">=75%", ">=50%", "<50%"]
    values = [
        buckets.pct_at_least_one,
        buckets.pct_all,
        buckets.pct_ge_75,
        buckets.pct_ge_50,
        buckets.pct_lt_50,
    ]
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    ax.bar(names, values, color="tab:blue")
    ax.set_ylim(0, 105)
    ax.set_ylabel("% of flagged communities")
    ax.set_title(f"Confirmed-member coverage ({buckets.communities_total} communities)")
    for i, value in enumerate(values):
        ax.text(i, value + 1, f"{value:.0f}%", ha="center", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_proximity_figure(proximity: ProximityReport, path: str | Path) -> Path:
    path = Path(path)
    names = ["During", "In 1D", "In 7D", "In 14D", "In 30D"]
    keys = ["during", "in_1d", "in_7d", "in_14d", "in_30d"]
    values = [proximity.percentages[key] for key in keys]
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    ax.bar(names, values, color="tab:orange")
    ax.set_ylim(0, 105)
    ax.set_ylabel("% of communities with a removal event")
    ax.set_title(
        f"Removal proximity ({proximity.communities_total} communities, "
        f"{proximity.excluded} excluded)"
    )
    for i, value in enumerate(values):
        ax.text(i, value + 1, f"{value:.0f}%", ha="center", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
