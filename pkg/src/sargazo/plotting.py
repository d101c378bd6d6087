"""Matplotlib figures written next to the CSV reports.

All figures use the Agg backend and strip the software tag from PNG metadata
so that identical inputs produce identical files.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .data.labels import LevelLabel  # noqa: E402

STYLE = {
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def level_names(n=len(LevelLabel)):
    if n == len(LevelLabel):
        return [lvl.display for lvl in LevelLabel]
    return [str(i) for i in range(n)]


def _save(fig, path):
    path = Path(path)
    fig.savefig(path, format="png", metadata={"Software": None}, bbox_inches="tight")
    plt.close(fig)
    return path


def _annotated_matrix(ax, values, fmt, names, title):
    im = ax.imshow(values, cmap="Blues", vmin=0)
    top = values.max() if values.size and values.max() > 0 else 1
    for (i, j), v in np.ndenumerate(values):
        ax.text(j, i, format(v, fmt), ha="center", va="center",
                color="white" if v > 0.6 * top else "black", fontsize=7)
    ax.set_xticks(range(len(names)), names, rotation=40, ha="right")
    ax.set_yticks(range(len(names)), names)
    ax.set_xlabel("predicted level")
    ax.set_ylabel("true level")
    ax.set_title(title)
    ax.spines[:].set_visible(False)
    return im


def plot_confusion(report, path, title=None):
    """Raw counts next to the row-normalized matrix."""
    names = level_names(len(report.matrix))
    with plt.rc_context(STYLE):
        fig, (a, b) = plt.subplots(1, 2, figsize=(10, 4.4))
        _annotated_matrix(a, report.matrix, "d", names, "Confusion matrix")
        _annotated_matrix(b, report.normalized, ".2f", names, "Normalized confusion matrix")
        fig.suptitle(title or f"accuracy {report.accuracy:.3f}, adjacent {report.adjacent_accuracy:.3f}")
        fig.tight_layout()
        return _save(fig, path)


def plot_class_distribution(counts, path, title="Level distribution"):
    names = level_names(len(counts))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3.6))
        bars = ax.bar(range(len(counts)), counts, color="#8c6d31")
        ax.bar_label(bars, fontsize=8)
        ax.set_xticks(range(len(counts)), names, rotation=20)
        ax.set_ylabel("images")
        ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)


def plot_history(history, path, title=None):
    epochs = [r.epoch for r in history.records]
    with plt.rc_context(STYLE):
        fig, (a, b) = plt.subplots(1, 2, figsize=(9, 3.4))
        a.plot(epochs, [r.train_loss for r in history.records], color="k", lw=1)
        a.set_xlabel("epoch")
        a.set_ylabel("training loss")
        b.plot(epochs, [r.train_acc for r in history.records], label="train", lw=1)
        b.plot(epochs, [r.val_acc for r in history.records], label="validation", lw=1)
        best = history.best()
        b.axvline(best.epoch, color="grey", ls=":", lw=1)
        b.set_xlabel("epoch")
        b.set_ylabel("accuracy")
        b.set_ylim(0, 1.02)
        b.legend(frameon=False)
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        return _save(fig, path)


def plot_grid(table, rows, cols, path, title="Validation accuracy"):
    """Heat-table of a networks x regimes accuracy grid; missing cells are NaN."""
    values = np.array([[table.get((r, c), np.nan) for c in cols] for r in rows], dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.8, 3.4))
        ax.imshow(np.nan_to_num(values, nan=0.0), cmap="YlGn", vmin=0, vmax=1)
        for (i, j), v in np.ndenumerate(values):
            ax.text(j, i, "failed" if np.isnan(v) else f"{v:.4f}", ha="center", va="center", fontsize=8)
        ax.set_xticks(range(len(cols)), cols)
        ax.set_yticks(range(len(rows)), rows)
        ax.spines[:].set_visible(False)
        ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)
