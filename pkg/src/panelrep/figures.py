"""Matplotlib renderings for the report paths: metric bars, attention maps."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .generator import AttentionTrace  # noqa: E402
from .metrics import MetricReport  # noqa: E402


def save_metric_bars(report: MetricReport, path, title: str = "") -> None:
    """Bar chart of the six corpus scores, annotated with values."""
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    names = list(MetricReport.COLUMNS)
    values = list(report.values())
    bars = ax.bar(names, values, color="#3b6ea5")
    for rect, v in zip(bars, values):
        ax.annotate(
            f"{v:.3f}",
            (rect.get_x() + rect.get_width() / 2, rect.get_height()),
            ha="center",
            va="bottom",
            fontsize=8,
        )
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("score")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_attention_heatmaps(traces: list[AttentionTrace], path, title: str = "") -> None:
    """Per-sentence image-attention heatmaps (words down, panel slots across)."""
    n = len(traces)
    fig, axes = plt.subplots(1, n, figsize=(2.0 * n, 2.6))
    if n == 1:
        axes = [axes]
    for m, (ax, trace) in enumerate(zip(axes, traces)):
        if trace.alpha.shape[0] == 0:
            ax.text(0.5, 0.5, "empty", ha="center", va="center", fontsize=8)
            ax.set_xticks([])
            ax.set_yticks([])
        else:
            ax.imshow(trace.alpha, vmin=0.0, vmax=1.0, aspect="auto", cmap="viridis")
            ax.set_xlabel("image")
        ax.set_title(f"sentence {m}", fontsize=8)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
