"""Figure rendering for the report path.

Everything draws through the Agg backend straight to files next to the CSV
output: per-metric method bars, insertion curves, sensitivity sweeps, the
confidence/localization scatter used to eyeball shortcut findings, and a
per-sample saliency grid.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def fig_size(width: float = 6.4, rows: int = 1):
    return (width, width * GOLDEN * rows)


def save_figure(fig, path, dpi: int = 130) -> None:
    fig.savefig(path, dpi=dpi, bbox_inches="tight")
    plt.close(fig)


def plot_metric_bars(summaries, path) -> None:
    """One panel per metric, methods on the x axis, group means as bars.

    Expects diagnostics.SummaryRow entries; only the grand ('*') rows are
    drawn when present, otherwise all rows."""
    rows = [s for s in summaries if s.dataset == "*"] or list(summaries)
    metrics = sorted({s.metric for s in rows})
    if not metrics:
        raise ValueError("nothing to plot")
    fig, axes = plt.subplots(1, len(metrics),
                             figsize=fig_size(3.2 * len(metrics)), squeeze=False)
    for ax, metric in zip(axes[0], metrics):
        entries = [s for s in rows if s.metric == metric]
        labels = [s.method for s in entries]
        values = [s.mean for s in entries]
        ax.bar(range(len(entries)), values, color="#4878a8")
        ax.set_xticks(range(len(entries)))
        ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
        ax.set_title(metric, fontsize=10)
        ax.grid(axis="y", alpha=0.3)
    save_figure(fig, path)


def plot_insertion_curves(curves: dict, path, title: str = "insertion") -> None:
    """curves: label -> InsertionCurve (or any object with .fractions/.scores)."""
    fig, ax = plt.subplots(figsize=fig_size(5.0))
    for label, curve in sorted(curves.items()):
        ax.plot(curve.fractions, curve.scores, label=label, linewidth=1.2)
    ax.set_xlabel("fraction of pixels inserted")
    ax.set_ylabel("score recovery")
    ax.set_title(title, fontsize=10)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7)
    save_figure(fig, path)


def plot_sensitivity_sweep(sweeps: dict, path) -> None:
    """sweeps: label -> list of (radius, value)."""
    fig, ax = plt.subplots(figsize=fig_size(5.0))
    for label, curve in sorted(sweeps.items()):
        rs = [r for r, _ in curve]
        vs = [v for _, v in curve]
        ax.plot(rs, vs, marker="o", markersize=3, label=label, linewidth=1.2)
    ax.set_xlabel("perturbation radius")
    ax.set_ylabel("max map change")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7)
    save_figure(fig, path)


def plot_cleverhans_scatter(points, findings, criteria, path) -> None:
    """points: (confidence, localization) for every screened sample;
    findings get ring markers; threshold lines show the decision region."""
    fig, ax = plt.subplots(figsize=fig_size(5.0))
    if points:
        xs, ys = zip(*points)
        ax.scatter(xs, ys, s=12, alpha=0.5, color="#4878a8", label="samples")
    if findings:
        ax.scatter([f.confidence for f in findings],
                   [f.localization for f in findings],
                   s=48, facecolors="none", edgecolors="#c04040",
                   label="findings")
    ax.axvline(criteria.theta_confidence, color="#c04040", linestyle="--",
               linewidth=0.9)
    ax.axhline(criteria.theta_localization, color="#c04040", linestyle="--",
               linewidth=0.9)
    ax.set_xlabel("confidence")
    ax.set_ylabel("localization")
    ax.set_xlim(0, 1.02)
    ax.grid(alpha=0.3)
    if points or findings:
        ax.legend(fontsize=7)
    save_figure(fig, path)


def plot_saliency_grid(image_array: np.ndarray, maps: dict, path) -> None:
    """Input image followed by one panel per method map."""
    panels = 1 + len(maps)
    fig, axes = plt.subplots(1, panels, figsize=(2.2 * panels, 2.6),
                             squeeze=False)
    ax = axes[0][0]
    ax.imshow(np.transpose(image_array, (1, 2, 0)))
    ax.set_title("input", fontsize=8)
    ax.axis("off")
    for ax, (label, scores) in zip(axes[0][1:], sorted(maps.items())):
        ax.imshow(scores, cmap="magma")
        ax.set_title(label, fontsize=8)
        ax.axis("off")
    save_figure(fig, path)
