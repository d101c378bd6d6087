"""Synthetic beach scenes whose class is the amount of dark algae on the sand.

Each image is a two-band layout (sea/sky above a horizon, sand below) with
elliptical brown clumps covering a class-dependent fraction of the sand. More
algae means a darker image, so mean intensity falls monotonically with the
level, while per-image brightness and horizon jitter keep neighbouring levels
from being separable by intensity alone.

``source-task-k`` scenes reuse the same background and clump renderer with a
greener palette; their k classes are evenly spaced coverage levels over the
whole frame. They stand in for a generic pretraining corpus.
"""
from __future__ import annotations

import datetime as _dt
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from .labels import LevelLabel, ManifestRecord, SceneLabel, write_manifest
from .ppm import write_ppm

LEVEL_COVERAGE = (0.02, 0.15, 0.30, 0.45, 0.60)
PLACES = ("Tulum", "Playa del Carmen", "Cancun", "Mahahual", "Cozumel", "Puerto Morelos")
_SAND = np.array([0.86, 0.78, 0.60])
_SEA = np.array([0.25, 0.50, 0.70])
_ALGAE = np.array([0.42, 0.27, 0.08])
_SOURCE_ALGAE = np.array([0.28, 0.36, 0.14])


@dataclass(frozen=True)
class TaskInfo:
    name: str
    num_classes: int
    is_source: bool


def parse_task(task: str) -> TaskInfo:
    if task == "level-5":
        return TaskInfo(task, 5, False)
    m = re.fullmatch(r"source-task-(\d+)", task)
    if m and int(m.group(1)) >= 2:
        return TaskInfo(task, int(m.group(1)), True)
    raise ConfigError(f"unknown synthetic task {task!r}; use 'level-5' or 'source-task-<k>' with k >= 2")


def _background(rng, side):
    horizon = int(round(side * rng.uniform(0.30, 0.50)))
    rows = np.linspace(0.0, 1.0, side)[:, None, None]
    sea = _SEA + rng.normal(0, 0.03, 3) + 0.10 * rows
    sand = _SAND + rng.normal(0, 0.03, 3) - 0.06 * rows
    img = np.where(np.arange(side)[:, None, None] < horizon, sea, sand)
    img = np.broadcast_to(img, (side, side, 3)).copy()
    return img, horizon


def _paint_clumps(img, rng, region, coverage, palette):
    """Stamp elliptical clumps until ``coverage`` of ``region`` is covered."""
    side = img.shape[0]
    yy, xx = np.mgrid[0:side, 0:side]
    covered = np.zeros((side, side), dtype=bool)
    area = region.sum()
    ys, xs = np.nonzero(region)
    target = coverage * area
    for _ in range(400):
        if covered[region].sum() >= target or area == 0:
            break
        k = rng.integers(len(ys))
        cy, cx = ys[k], xs[k]
        ry = side * rng.uniform(0.02, 0.06)
        rx = ry * rng.uniform(1.0, 2.5)
        blob = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        covered |= blob & region
    shade = palette + rng.normal(0, 0.03, 3)
    texture = rng.normal(0, 0.05, (side, side, 1))
    img[covered] = (shade + texture[covered])
    return covered


def render(cls: int, task: TaskInfo, side: int, rng: np.random.Generator) -> np.ndarray:
    """One scene as uint8 (side, side, 3)."""
    img, horizon = _background(rng, side)
    region = np.zeros((side, side), dtype=bool)
    if task.is_source:
        region[:, :] = True
        coverage = 0.6 * cls / (task.num_classes - 1) + rng.uniform(-0.02, 0.02)
        palette = _SOURCE_ALGAE
    else:
        region[horizon:, :] = True
        coverage = LEVEL_COVERAGE[cls] + rng.uniform(-0.03, 0.03)
        palette = _ALGAE
    _paint_clumps(img, rng, region, max(coverage, 0.0), palette)
    img = img * rng.uniform(0.9, 1.1) + rng.normal(0, 0.02, img.shape)
    return np.floor(np.clip(img, 0, 1) * 255 + 0.5).astype(np.uint8)


def synth_images(n: int, side: int, seed: int, task: str = "level-5", label_noise: float = 0.0):
    """Generate ``n`` scenes per class in memory.

    Returns ``(pixels, labels, true_labels)``: uint8 (N, side, side, 3) and two
    int arrays. With ``label_noise`` p each recorded label moves one ordinal
    step (toward a valid neighbour) with probability p.
    """
    if n < 1 or side < 4:
        raise ConfigError(f"need n >= 1 and side >= 4, got n={n}, side={side}")
    info = parse_task(task)
    pixels, labels = [], []
    for cls in range(info.num_classes):
        for i in range(n):
            rng = np.random.default_rng([seed, info.num_classes, int(info.is_source), cls, i])
            pixels.append(render(cls, info, side, rng))
            labels.append(cls)
    truth = np.asarray(labels, dtype=np.int64)
    noisy = truth.copy()
    if label_noise > 0:
        rng = np.random.default_rng([seed, 7919])
        flip = rng.random(len(noisy)) < label_noise
        step = np.where(rng.random(len(noisy)) < 0.5, -1, 1)
        moved = noisy + step
        moved = np.where((moved < 0) | (moved >= info.num_classes), noisy - step, moved)
        noisy = np.where(flip, moved, noisy)
    return np.stack(pixels), noisy, truth


@dataclass(frozen=True)
class SourceRecord:
    image_path: str
    label: int

    @property
    def level(self):
        return self.label


def synth_dataset(n: int, side: int, seed: int, out_dir, task: str = "level-5",
                  label_noise: float = 0.0):
    """Write ``n`` PPM scenes per class under ``out_dir/img`` plus a label file.

    Level tasks produce ``manifest.csv`` and ManifestRecords; source tasks
    produce ``labels.csv`` (``path,label``) and SourceRecords.
    """
    info = parse_task(task)
    pixels, labels, _ = synth_images(n, side, seed, task, label_noise)
    out_dir = Path(out_dir)
    (out_dir / "img").mkdir(parents=True, exist_ok=True)
    records = []
    base_date = _dt.date(2019, 1, 1)
    for i, (img, label) in enumerate(zip(pixels, labels)):
        rel = f"img/{info.name}_{i:05d}.ppm"
        write_ppm(out_dir / rel, img)
        if info.is_source:
            records.append(SourceRecord(rel, int(label)))
        else:
            date = (base_date + _dt.timedelta(days=(i * 37) % 730)).isoformat()
            records.append(ManifestRecord(rel, LevelLabel(int(label)), SceneLabel.PLAYA,
                                          PLACES[i % len(PLACES)], date))
    if info.is_source:
        lines = ["path,label"] + [f"{r.image_path},{r.label}" for r in records]
        (out_dir / "labels.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        write_manifest(out_dir / "manifest.csv", records)
    return records
