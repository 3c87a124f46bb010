"""Report figures.  Everything renders headless to files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "axes.labelsize": 8,
    "axes.titlesize": 8,
    "axes.linewidth": 0.5,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 8,
    "legend.fontsize": 7,
    "legend.frameon": False,
    "lines.linewidth": 1.0,
    "lines.markersize": 3,
    "xtick.labelsize": 7,
    "ytick.labelsize": 7,
    "xtick.major.width": 0.5,
    "ytick.major.width": 0.5,
    "image.interpolation": "nearest",
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})  # no version stamp in the bytes
    plt.close(fig)
    return path


def plot_study(study, metrics, path, xlabel=None) -> Path:
    """Line plot per metric over the study grid with 95% CI bars."""
    from .harness.study import AXIS_LABELS

    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(3.4, 2.4))
        categorical = any(isinstance(x, str) for x in study.grid)
        for metric in metrics:
            xs, means, cis = study.series(metric)
            if not xs:
                continue
            pos = [study.grid.index(x) for x in xs] if categorical else xs
            ax.errorbar(pos, means, yerr=cis, marker="o", capsize=2, label=metric)
        if categorical:
            ax.set_xticks(range(len(study.grid)))
            ax.set_xticklabels([str(x) for x in study.grid])
        elif all(x > 0 for x in study.grid):
            ax.set_xscale("log", base=2)
            ax.set_xticks(study.grid)
            ax.set_xticklabels([str(x) for x in study.grid])
        ax.set_xlabel(xlabel or AXIS_LABELS.get(study.kind, study.kind))
        ax.set_ylabel("score (mean, 95% CI)")
        ax.legend()
        return _save(fig, path)


def plot_loss_curve(step_losses, path, epoch_losses=None) -> Path:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(3.4, 2.4))
        ax.plot(np.arange(len(step_losses)), step_losses, color="0.7", lw=0.5, label="step")
        if epoch_losses:
            steps_per_epoch = len(step_losses) / len(epoch_losses)
            xs = (np.arange(len(epoch_losses)) + 1) * steps_per_epoch - 1
            ax.plot(xs, epoch_losses, color="C0", marker="o", label="epoch mean")
        ax.set_xlabel("optimizer step")
        ax.set_ylabel("training loss")
        ax.legend()
        return _save(fig, path)


def plot_metric_summary(aggregates: dict, path, title=None) -> Path:
    """Bar chart of aggregate metrics with 95% CI."""
    names = sorted(aggregates)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(3.4, 2.4))
        means = [aggregates[n]["mean"] for n in names]
        cis = [aggregates[n]["ci95"] for n in names]
        ax.bar(range(len(names)), means, yerr=cis, capsize=2, color="C0", width=0.6)
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=30, ha="right")
        ax.set_ylabel("mean (95% CI)")
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_candidates(target, raters, candidates, path, threshold=0.5) -> Path:
    """Target, rater masks and candidate masks in one row each."""
    k = len(candidates)
    r = 0 if raters is None else len(raters)
    cols = max(k, r, 1)
    with plt.rc_context(RC):
        fig, axes = plt.subplots(3, cols, figsize=(0.9 * cols, 2.8), squeeze=False)
        for ax in axes.ravel():
            ax.axis("off")
        axes[0, 0].imshow(target, cmap="gray", vmin=0, vmax=1)
        axes[0, 0].set_title("target")
        for i in range(r):
            axes[1, i].imshow(raters[i], cmap="gray", vmin=0, vmax=1)
            axes[1, i].set_title(f"rater {i}")
        for i in range(k):
            axes[2, i].imshow(candidates[i] >= threshold, cmap="gray", vmin=0, vmax=1)
            axes[2, i].set_title(f"cand {i}")
        return _save(fig, path)
