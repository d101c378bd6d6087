"""Resize, normalization and augmentation of (3, H, W) image tensors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ShapeError


@dataclass(frozen=True)
class NormStats:
    mean: tuple[float, float, float] = (0.5, 0.5, 0.5)
    std: tuple[float, float, float] = (0.5, 0.5, 0.5)

    def __post_init__(self):
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ConfigError("normalization stats need three channels")
        if any(s <= 0 for s in self.std):
            raise ConfigError(f"std must be positive per channel, got {self.std}")

    @classmethod
    def identity(cls) -> "NormStats":
        return cls((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))

    @classmethod
    def from_images(cls, images: np.ndarray) -> "NormStats":
        """Per-channel statistics of an (N, 3, H, W) stack."""
        mean = images.mean(axis=(0, 2, 3), dtype=np.float64)
        std = images.std(axis=(0, 2, 3), dtype=np.float64)
        std = np.where(std > 1e-6, std, 1.0)
        return cls(tuple(float(m) for m in mean), tuple(float(s) for s in std))

    def as_dict(self):
        return {"mean": list(self.mean), "std": list(self.std)}


def _resize_axis(img: np.ndarray, out: int, axis: int) -> np.ndarray:
    size = img.shape[axis]
    if size == out:
        return img
    src = (np.arange(out, dtype=np.float64) + 0.5) * (size / out) - 0.5
    src = np.clip(src, 0, size - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, size - 1)
    frac = (src - lo).astype(img.dtype)
    shape = [1] * img.ndim
    shape[axis] = out
    frac = frac.reshape(shape)
    return np.take(img, lo, axis=axis) * (1 - frac) + np.take(img, hi, axis=axis) * frac


def resize_bilinear(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of (C, H, W) with half-pixel centers and edge clamping."""
    if img.ndim != 3 or img.shape[1] < 1 or img.shape[2] < 1:
        raise ShapeError(f"expected a (C, H, W) image, got {img.shape}")
    if height < 1 or width < 1:
        raise ShapeError(f"target size must be positive, got {height}x{width}")
    return _resize_axis(_resize_axis(img, height, 1), width, 2).astype(np.float32)


def normalize(img: np.ndarray, stats: NormStats) -> np.ndarray:
    mean = np.asarray(stats.mean, dtype=np.float32).reshape(-1, 1, 1)
    std = np.asarray(stats.std, dtype=np.float32).reshape(-1, 1, 1)
    return ((img - mean) / std).astype(np.float32)


def preprocess(img: np.ndarray, side: int, stats: NormStats) -> np.ndarray:
    """Resize to side x side, then per-channel (x - mean) / std."""
    return normalize(resize_bilinear(img, side, side), stats)


def hflip(img: np.ndarray) -> np.ndarray:
    return img[..., ::-1].copy()


def augment(img: np.ndarray, rng: np.random.Generator, flags=("hflip",)) -> np.ndarray:
    """Random horizontal flip with probability 0.5 when ``"hflip"`` is in ``flags``."""
    flags = set(flags or ())
    unknown = flags - {"hflip"}
    if unknown:
        raise ConfigError(f"unknown augmentation flags {sorted(unknown)}")
    if "hflip" in flags and rng.random() < 0.5:
        return hflip(img)
    return img


def augment_batch(batch: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Independent random horizontal flips over an (N, C, H, W) batch."""
    flip = rng.random(len(batch)) < 0.5
    if not flip.any():
        return batch
    out = batch.copy()
    out[flip] = out[flip][..., ::-1]
    return out
