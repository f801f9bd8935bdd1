"""Report figures. Rendered headless (Agg) next to the delimited outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "savefig.dpi": 120,
    "svg.hashsalt": "visdebias",
}

GROUP_COLORS = {"temp": "#1f77b4", "top_k": "#d62728", "top_p": "#2ca02c"}


def save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # no timestamps or version strings, keeps reruns byte-stable
    meta = {"Software": None} if path.suffix == ".png" else {"Date": None, "Creator": None} if path.suffix == ".svg" else None
    fig.savefig(path, metadata=meta, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_probe(report: dict, path, title: str = "Answer distribution without visual evidence"):
    """One horizontal bar panel per degenerate variant, ranked answers top-down."""
    with plt.rc_context(STYLE):
        n = max(len(report), 1)
        fig, axes = plt.subplots(1, n, figsize=(2.4 * n, 3.2), sharex=True, squeeze=False)
        for ax, (variant, rows) in zip(axes[0], report.items()):
            answers = [r.answer for r in rows][::-1]
            probs = [r.probability for r in rows][::-1]
            ax.barh(range(len(rows)), probs, color="#4c72b0")
            ax.set_yticks(range(len(rows)), answers)
            ax.set_title(variant)
            ax.set_xlabel("mean probability")
        fig.suptitle(title)
        fig.tight_layout()
        return save(fig, path)


def plot_confidence_bins(bins: dict, path, title: str = "Accuracy by confidence"):
    """Grouped bars of per-bin accuracy; ``bins`` maps a method name to a BinReport."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 3.0))
        names = list(bins)
        width = 0.8 / max(len(names), 1)
        for j, name in enumerate(names):
            rep = bins[name]
            n = len(rep.counts)
            xs = [i + (j - (len(names) - 1) / 2) * width for i in range(n)]
            ys = [a if a is not None else 0.0 for a in rep.accuracy]
            ax.bar(xs, ys, width=width, label=name)
        if names:
            rep = bins[names[0]]
            ax.set_xticks(range(len(rep.counts)), [f"{rep.edges[i]:.1f}-{rep.edges[i + 1]:.1f}" for i in range(len(rep.counts))], rotation=45)
        ax.set_ylim(0, 1.05)
        ax.set_xlabel("confidence")
        ax.set_ylabel("accuracy")
        ax.set_title(title)
        ax.legend()
        fig.tight_layout()
        return save(fig, path)


def plot_sweep(per_config: dict[str, float], summary: dict, path, title: str = "Accuracy per decoding configuration"):
    """Accuracy against parameter value for each strategy group; greedy default as a reference line."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(9.0, 2.8), sharey=True)
        for ax, group in zip(axes, ("temp", "top_k", "top_p")):
            items = [(k.split("=", 1)[1], v) for k, v in per_config.items() if k.startswith(group + "=")]
            ax.plot(range(len(items)), [v for _, v in items], marker="o", ms=3, color=GROUP_COLORS[group])
            step = 1 if group == "top_k" else 4
            ax.set_xticks(range(0, len(items), step), [items[i][0] for i in range(0, len(items), step)])
            ax.axhline(summary.get("default", 0.0), color="0.5", ls="--", lw=1, label="greedy default")
            ax.set_title(f"{group} (best-of {summary['groups'][group]:.3f})")
            ax.set_xlabel(group)
        axes[0].set_ylabel("accuracy")
        axes[0].set_ylim(0, 1.05)
        axes[0].legend(loc="lower left")
        fig.suptitle(title)
        fig.tight_layout()
        return save(fig, path)
