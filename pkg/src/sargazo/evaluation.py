"""Predictions, confusion matrices and ordinal-aware accuracy."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data.dataset import ImageSet
from .data.labels import LevelLabel
from .data.ppm import write_pgm
from .errors import InputError, ShapeError
from .graph import NetworkGraph


def predict(net: NetworkGraph, img: np.ndarray):
    """Label and class probabilities for one preprocessed (3, S, S) image.

    Ties in the arg-max resolve to the lowest class code.
    """
    if img.ndim != 3 or tuple(img.shape) != net.input_shape:
        raise ShapeError(f"image shape {img.shape} does not match network input {net.input_shape}")
    trace = net.forward(img[None])
    probs = trace.output[0]
    label = int(np.argmax(trace.logits[0]))
    if net.num_classes == len(LevelLabel):
        label = LevelLabel(label)
    return label, probs


def confusion(preds, truths, n: int) -> np.ndarray:
    """``m[t, p]`` counts samples with true class t predicted as p."""
    preds = np.asarray(preds, dtype=np.int64).ravel()
    truths = np.asarray(truths, dtype=np.int64).ravel()
    if preds.shape != truths.shape:
        raise InputError(f"{preds.size} predictions but {truths.size} true labels")
    for name, arr in (("prediction", preds), ("label", truths)):
        if arr.size and (arr.min() < 0 or arr.max() >= n):
            raise InputError(f"{name} codes must lie in [0, {n})")
    return np.bincount(truths * n + preds, minlength=n * n).reshape(n, n)


def accuracy(m: np.ndarray) -> float:
    total = int(m.sum())
    if total == 0:
        raise InputError("accuracy is undefined for an empty confusion matrix")
    return int(np.trace(m)) / total


def normalize_rows(m: np.ndarray):
    """Row-normalized matrix plus a boolean flag per row that had no samples."""
    m = np.asarray(m, dtype=np.float64)
    support = m.sum(axis=1)
    empty = support == 0
    out = np.zeros_like(m)
    out[~empty] = m[~empty] / support[~empty, None]
    return out, empty


def adjacent_accuracy(m: np.ndarray, band: int = 1) -> float:
    """Share of samples predicted within ``band`` ordinal steps of the truth."""
    m = np.asarray(m)
    total = int(m.sum())
    if total == 0:
        raise InputError("adjacent accuracy is undefined for an empty confusion matrix")
    i, j = np.indices(m.shape)
    return int(m[np.abs(i - j) <= band].sum()) / total


@dataclass
class EvalReport:
    accuracy: float
    matrix: np.ndarray
    normalized: np.ndarray
    adjacent_accuracy: float
    recall: np.ndarray
    empty_rows: np.ndarray

    @classmethod
    def from_matrix(cls, m) -> "EvalReport":
        m = np.asarray(m, dtype=np.int64)
        norm, empty = normalize_rows(m)
        recall = np.where(empty, 0.0, np.diag(norm))
        return cls(accuracy(m), m, norm, adjacent_accuracy(m), recall, empty)

    def write(self, out_dir, stem="confusion") -> dict[str, Path]:
        """Write ``<stem>.csv`` (counts + summary), ``<stem>_normalized.csv`` and ``<stem>.pgm``."""
        out_dir = Path(out_dir)
        paths = {"csv": out_dir / f"{stem}.csv", "normalized": out_dir / f"{stem}_normalized.csv",
                 "pgm": out_dir / f"{stem}.pgm"}
        lines = [",".join(str(int(v)) for v in row) for row in self.matrix]
        lines += ["accuracy,adjacent_accuracy", f"{self.accuracy:.6f},{self.adjacent_accuracy:.6f}"]
        paths["csv"].write_text("\n".join(lines) + "\n", encoding="utf-8")
        norm_lines = [",".join(f"{v:.6f}" for v in row) for row in self.normalized]
        paths["normalized"].write_text("\n".join(norm_lines) + "\n", encoding="utf-8")
        write_pgm(paths["pgm"], heatmap_pixels(self.normalized))
        return paths


def heatmap_pixels(normalized: np.ndarray) -> np.ndarray:
    """One gray byte per cell, ``round(255 * value)``."""
    return np.floor(np.clip(normalized, 0, 1) * 255 + 0.5).astype(np.uint8)


def read_confusion_csv(path) -> tuple[np.ndarray, float, float]:
    lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
    split = lines.index("accuracy,adjacent_accuracy")
    m = np.array([[int(v) for v in line.split(",")] for line in lines[:split]], dtype=np.int64)
    acc, adj = (float(v) for v in lines[split + 1].split(","))
    return m, acc, adj


def evaluate(net: NetworkGraph, dataset: ImageSet, batch_size: int = 100) -> EvalReport:
    """Eval-mode predictions over a preprocessed image set, assembled into a report."""
    if len(dataset) == 0:
        raise InputError("cannot evaluate an empty dataset")
    preds = []
    for start in range(0, len(dataset), batch_size):
        chunk = dataset.images[start:start + batch_size]
        try:
            logits = net.forward(chunk).logits
        except ShapeError as exc:
            raise ShapeError(f"{dataset.paths[start]}: {exc}") from None
        preds.append(np.argmax(logits, axis=1))
    m = confusion(np.concatenate(preds), dataset.labels, net.num_classes)
    return EvalReport.from_matrix(m)
