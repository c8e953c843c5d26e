"""Report figures rendered to files next to the delimited outputs.

Everything draws through the Agg backend so the CLI works headless.
"""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_loss_curves(log_entries, path):
    """Per-loss training curves from the JSON-lines metric log entries."""
    steps = [e["step"] for e in log_entries]
    fig, ax = plt.subplots(figsize=(7, 4))
    for key, label in (("loss_rst", "restoration"), ("loss_trs", "translation")):
        pts = [(s, e[key]) for s, e in zip(steps, log_entries) if e.get(key) is not None]
        if pts:
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                    markersize=3, label=label)
    ax.set_xlabel("optimizer step")
    ax.set_ylabel("loss (mean NLL per token)")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_topic_timeseries(series_by_topic, path, max_topics=None):
    """Smoothed per-topic weight over time, one panel per topic."""
    topics = sorted(series_by_topic)
    if max_topics:
        topics = topics[:max_topics]
    n = len(topics)
    cols = min(3, n)
    rows = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(4.5 * cols, 2.6 * rows), squeeze=False)
    for idx, topic in enumerate(topics):
        ax = axes[idx // cols][idx % cols]
        dates = [d for d, _ in series_by_topic[topic]]
        values = [v for _, v in series_by_topic[topic]]
        ax.plot(range(len(dates)), values)
        ax.set_title(f"topic {topic}")
        ticks = list(range(0, len(dates), max(1, len(dates) // 5)))
        ax.set_xticks(ticks)
        ax.set_xticklabels([dates[i] for i in ticks], rotation=45, fontsize=7)
        ax.grid(alpha=0.3)
    for idx in range(n, rows * cols):
        axes[idx // cols][idx % cols].axis("off")
    fig.tight_layout()
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_metric_bars(rows, path, ylabel="score"):
    """Grouped comparison bars; rows = [(label, value), ...]."""
    fig, ax = plt.subplots(figsize=(1.6 * max(4, len(rows)), 4))
    labels = [r[0] for r in rows]
    values = [r[1] for r in rows]
    ax.bar(range(len(rows)), values, color="#4878a8")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylabel(ylabel)
    for i, v in enumerate(values):
        ax.text(i, v, f"{v:.3f}", ha="center", va="bottom", fontsize=8)
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
