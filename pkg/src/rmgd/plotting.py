"""Report figures written straight to image files (no display needed)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .match_eval import RocCurve  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "lines.linewidth": 1.2,
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}
# no version string in the PNG, so reruns give identical files
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_roc(curves: dict, path, recall: float = 0.95) -> Path:
    """ROC curves (FPR on x, TPR on y), one per label in ``curves``."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.6))
        for label, c in curves.items():
            c: RocCurve
            ax.plot(np.r_[0.0, c.fpr], np.r_[0.0, c.tpr], label=label, drawstyle="steps-post")
        ax.axhline(recall, color="0.6", lw=0.8, ls="--")
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.01)
        ax.legend(loc="lower right", frameon=False)
        return _save(fig, path)


def plot_group_weights(weights, labels, path) -> Path:
    """Bar chart of the learned group weights."""
    w = np.asarray(weights, dtype=np.float64)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.12 * len(w) + 1.5), 3.0))
        x = np.arange(len(w))
        ax.bar(x, w, color=np.where(w > 0, "#2b8cbe", "0.7"))
        if len(w) <= 26:
            ax.set_xticks(x, labels, rotation=60, ha="right")
        ax.set_ylabel("weight")
        ax.set_title(f"{int((w > 0).sum())} of {len(w)} groups active")
        return _save(fig, path)


def plot_group_fpr(fprs: dict, combined: dict, path) -> Path:
    """FPR@95 of each single group as bars, with combined descriptors as horizontal lines."""
    names = list(fprs)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.35 * len(names) + 1.5), 3.0))
        ax.bar(np.arange(len(names)), [100 * fprs[n] for n in names], color="#7bccc4")
        for (label, v), ls in zip(combined.items(), ("-", "--", ":", "-.")):
            ax.axhline(100 * v, color="k", lw=1.0, ls=ls, label=label)
        ax.set_xticks(np.arange(len(names)), names, rotation=60, ha="right")
        ax.set_ylabel("FPR at 95% recall (%)")
        if combined:
            ax.legend(frameon=False)
        return _save(fig, path)
