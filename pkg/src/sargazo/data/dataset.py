"""Splitting, label counting and the in-memory image stack used for training."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DecodeError, ShapeError
from .labels import NUM_LEVELS, LevelLabel, ManifestRecord, SceneLabel
from .ppm import decode_image
from .transforms import NormStats, normalize, resize_bilinear


def _exact_fraction(fraction) -> Fraction:
    frac = Fraction(repr(float(fraction))) if isinstance(fraction, float) else Fraction(fraction)
    if not 0 < frac < 1:
        raise ConfigError(f"train fraction must be in (0, 1), got {fraction}")
    return frac


def _level(rec) -> int:
    return int(getattr(rec, "level", rec))


def split_indices(labels, train_fraction=0.8, seed=0, stratified=True):
    """Index form of :func:`split_dataset`: ``(train_idx, val_idx)`` in ascending order."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ConfigError("cannot split an empty record list")
    frac = _exact_fraction(train_fraction)
    rng = np.random.default_rng(seed)
    if stratified:
        chosen = []
        for level in np.unique(labels):
            idx = np.flatnonzero(labels == level)
            take = math.floor(len(idx) * frac)
            chosen.append(rng.permutation(idx)[:take])
        chosen = np.concatenate(chosen)
    else:
        chosen = rng.permutation(len(labels))[:math.floor(len(labels) * frac)]
    in_train = np.zeros(len(labels), dtype=bool)
    in_train[chosen] = True
    return np.flatnonzero(in_train), np.flatnonzero(~in_train)


def split_dataset(records, train_fraction=0.8, seed=0, stratified=True):
    """Deterministic train/validation partition.

    The training side gets ``floor(count * fraction)`` records (per level when
    stratified); the remainder goes to validation. Both sides keep input order.
    """
    records = list(records)
    train_idx, val_idx = split_indices([_level(r) for r in records], train_fraction, seed, stratified)
    return [records[i] for i in train_idx], [records[i] for i in val_idx]


def class_distribution(records, num_classes=NUM_LEVELS) -> list[int]:
    counts = [0] * num_classes
    for r in records:
        counts[_level(r)] += 1
    return counts


def scene_distribution(records) -> dict[SceneLabel, int]:
    counts = Counter(r.scene for r in records)
    return {s: counts.get(s, 0) for s in SceneLabel}


def write_distribution_csv(path, counts) -> None:
    lines = ["level_name,count"]
    lines += [f"{LevelLabel(i).canonical},{c}" for i, c in enumerate(counts)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class ImageSet:
    """Preprocessed images (N, 3, S, S) float32 with integer labels."""

    images: np.ndarray
    labels: np.ndarray
    paths: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise ConfigError(f"{len(self.images)} images but {len(self.labels)} labels")
        if not self.paths:
            self.paths = [f"#{i}" for i in range(len(self.labels))]

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "ImageSet":
        idx = np.asarray(idx, dtype=np.int64)
        return ImageSet(self.images[idx], self.labels[idx], [self.paths[i] for i in idx])

    def normalized(self, stats: NormStats) -> "ImageSet":
        mean = np.asarray(stats.mean, dtype=np.float32).reshape(1, -1, 1, 1)
        std = np.asarray(stats.std, dtype=np.float32).reshape(1, -1, 1, 1)
        return ImageSet(((self.images - mean) / std).astype(np.float32), self.labels, self.paths)


def resolve(record: ManifestRecord, base_dir) -> Path:
    p = Path(record.image_path)
    return p if p.is_absolute() or base_dir is None else Path(base_dir) / p


def load_images(records, side: int, base_dir=None) -> ImageSet:
    """Decode and resize every record to side x side (values still in [0, 1])."""
    images = np.empty((len(records), 3, side, side), dtype=np.float32)
    paths = []
    for i, rec in enumerate(records):
        path = resolve(rec, base_dir)
        try:
            images[i] = resize_bilinear(decode_image(path), side, side)
        except ShapeError as exc:
            raise DecodeError(f"{path}: {exc}") from None
        paths.append(str(path))
    return ImageSet(images, [int(r.level) for r in records], paths)


def load_image_set(records, side: int, stats: NormStats, base_dir=None) -> ImageSet:
    return load_images(records, side, base_dir).normalized(stats)


def iterate_batches(n: int, batch_size: int, rng: np.random.Generator | None = None):
    """Index batches covering ``range(n)`` once; shuffled when ``rng`` is given.
    The final partial batch is kept."""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def preprocess_stack(raw: np.ndarray, side: int, stats: NormStats) -> np.ndarray:
    return np.stack([normalize(resize_bilinear(img, side, side), stats) for img in raw])
