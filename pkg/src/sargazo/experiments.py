"""Experiment drivers behind the command-line interface.

Every ``cmd_*`` function validates its inputs and loads all data before the
output directory is touched. Files are produced in a staging directory and
moved into place only when the whole command succeeded, so a failed run
leaves no partial reports behind.
"""
from __future__ import annotations

import json
import logging
import os
import shutil
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import plotting
from .architectures import DISPLAY_NAMES, FAMILIES, ArchSpec, build
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data.dataset import (ImageSet, class_distribution, load_images, scene_distribution,
                           split_indices, write_distribution_csv)
from .data.labels import NUM_LEVELS, LevelLabel, load_manifest
from .data.ppm import decode_image
from .data.synth import synth_dataset, synth_images
from .data.transforms import NormStats, preprocess
from .errors import CheckpointError, ConfigError, SargazoError
from .evaluation import EvalReport, evaluate, predict
from .gradcheck import run_suite, threshold_for
from .training import REGIME_TITLES, REGIMES, TrainConfig, apply_regime, pretrain_source, train

logger = logging.getLogger(__name__)

DESK_INPUT_SIZE = 64
DESK_SCALE = Fraction(1, 8)
DESK_EPOCHS = 50
SOURCE_CLASSES = 8


# -- output helpers ---------------------------------------------------------

@contextmanager
def staged_output(out_dir):
    """Yield a scratch directory whose files are moved into ``out_dir`` on success."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=out_dir))
    try:
        yield stage
        for src in sorted(stage.rglob("*")):
            if src.is_file():
                dst = out_dir / src.relative_to(stage)
                dst.parent.mkdir(parents=True, exist_ok=True)
                os.replace(src, dst)
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def _write_text(path, text):
    Path(path).write_text(text, encoding="utf-8")


# -- model sidecar ----------------------------------------------------------

def sidecar_path(ckpt_path) -> Path:
    return Path(ckpt_path).with_suffix(".json")


def model_meta(spec: ArchSpec, stats: NormStats, regime: str, ck: Checkpoint) -> dict:
    return {
        "arch": {"family": spec.family, "width_scale": str(spec.width_scale), "input_size": spec.input_size,
                 "num_classes": spec.num_classes, "dropout": spec.dropout, "in_channels": spec.in_channels},
        "norm": stats.as_dict(),
        "regime": regime,
        "fingerprint": f"{ck.fingerprint:016x}",
        "epoch": ck.epoch,
        "val_accuracy": round(float(ck.val_accuracy), 6),
    }


def write_model(stage, ck: Checkpoint, spec: ArchSpec, stats: NormStats, regime: str, stem="model"):
    save_checkpoint(ck, Path(stage) / f"{stem}.ckpt")
    meta = json.dumps(model_meta(spec, stats, regime, ck), indent=2, sort_keys=True)
    _write_text(Path(stage) / f"{stem}.json", meta + "\n")


def load_model(ckpt_path):
    """Rebuild the network described by the sidecar and load the checkpoint into it."""
    meta_path = sidecar_path(ckpt_path)
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        a = meta["arch"]
        spec = ArchSpec(a["family"], Fraction(a["width_scale"]), int(a["input_size"]), int(a["num_classes"]),
                        a.get("dropout"), int(a.get("in_channels", 3)))
        stats = NormStats(tuple(meta["norm"]["mean"]), tuple(meta["norm"]["std"]))
    except FileNotFoundError:
        raise CheckpointError(f"missing model description {meta_path}") from None
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{meta_path}: malformed model description ({exc})") from None
    net = build(spec)
    ck = load_checkpoint(ckpt_path, net)
    ck.load_into(net)
    return net, spec, stats, ck


# -- data -------------------------------------------------------------------

@dataclass
class SplitData:
    train: ImageSet
    val: ImageSet
    stats: NormStats
    num_records: int


def prepare_data(manifest, input_size: int, seed: int, train_fraction=0.8, stratified=True) -> SplitData:
    """Load, split and normalize a manifest with statistics from the training side only."""
    manifest = Path(manifest)
    records = load_manifest(manifest)
    if not records:
        raise ConfigError(f"{manifest} has no records")
    raw = load_images(records, input_size, base_dir=manifest.parent)
    train_idx, val_idx = split_indices(raw.labels, train_fraction, seed, stratified)
    if len(train_idx) == 0 or len(val_idx) == 0:
        raise ConfigError(f"split of {len(records)} records leaves an empty side")
    train_raw, val_raw = raw.subset(train_idx), raw.subset(val_idx)
    stats = NormStats.from_images(train_raw.images)
    return SplitData(train_raw.normalized(stats), val_raw.normalized(stats), stats, len(records))


def make_spec(family, scale=DESK_SCALE, input_size=DESK_INPUT_SIZE) -> ArchSpec:
    spec = ArchSpec(family, scale, input_size)
    build(spec)  # surfaces shape errors (input too small for the family) early
    return spec


# -- train / eval / predict -------------------------------------------------

@dataclass
class RunResult:
    checkpoint: Checkpoint
    history: object
    report: EvalReport


def run_cell(spec: ArchSpec, data: SplitData, cfg: TrainConfig, source: Checkpoint | None) -> RunResult:
    net = apply_regime(build(spec, cfg.seed), cfg.regime, source, spec.num_classes)
    ck, history = train(net, data.train, data.val, cfg)
    return RunResult(ck, history, evaluate(net, data.val))


def write_run(stage, result: RunResult, spec, stats, regime, figures=True, title=None):
    stage = Path(stage)
    stage.mkdir(parents=True, exist_ok=True)
    write_model(stage, result.checkpoint, spec, stats, regime)
    result.history.write_csv(stage / "history.csv")
    result.report.write(stage)
    if figures:
        plotting.plot_history(result.history, stage / "history.png", title)
        plotting.plot_confusion(result.report, stage / "confusion.png", title)


def _load_source(path) -> Checkpoint:
    if path is None:
        raise ConfigError("regimes fe and ft need --source-ckpt")
    return load_checkpoint(path)


def cmd_train(manifest, family, regime="ts", out_dir=".", epochs=DESK_EPOCHS, lr=0.001, batch_size=100,
              seed=0, scale=DESK_SCALE, input_size=DESK_INPUT_SIZE, source_ckpt=None, augment=False,
              class_weighted=False, figures=True) -> RunResult:
    """Train one network on the manifest's shared 80/20 split and write its reports."""
    cfg = TrainConfig(epochs, lr, batch_size, seed, regime, str(source_ckpt) if source_ckpt else None,
                      augment, class_weighted)
    spec = make_spec(family, scale, input_size)
    source = _load_source(source_ckpt) if cfg.regime != "TS" else None
    if source is not None:
        apply_regime(build(spec, seed), cfg.regime, source)  # compatibility check before training
    data = prepare_data(manifest, input_size, seed)
    result = run_cell(spec, data, cfg, source)
    with staged_output(out_dir) as stage:
        write_run(stage, result, spec, data.stats, cfg.regime, figures,
                  f"{DISPLAY_NAMES[family]} {REGIME_TITLES[cfg.regime]}")
    return result


def cmd_eval(manifest, checkpoint, out_dir=".", figures=True) -> EvalReport:
    """Evaluate a trained model on every record of a manifest."""
    net, spec, stats, _ = load_model(checkpoint)
    manifest = Path(manifest)
    records = load_manifest(manifest)
    if not records:
        raise ConfigError(f"{manifest} has no records")
    data = load_images(records, spec.input_size, base_dir=manifest.parent).normalized(stats)
    report = evaluate(net, data)
    with staged_output(out_dir) as stage:
        report.write(stage)
        if figures:
            plotting.plot_confusion(report, stage / "confusion.png")
    return report


def cmd_predict(checkpoint, image):
    """``(label, probabilities)`` for one image file."""
    net, spec, stats, _ = load_model(checkpoint)
    img = preprocess(decode_image(image), spec.input_size, stats)
    return predict(net, img)


def format_prediction(label, probs) -> str:
    code = int(label)
    name = LevelLabel(code).canonical if len(probs) == NUM_LEVELS else str(code)
    header = ["label", "code"] + [f"p_{LevelLabel(i).canonical}" if len(probs) == NUM_LEVELS else f"p_{i}"
                                  for i in range(len(probs))]
    values = [name, str(code)] + [f"{p:.4f}" for p in probs]
    return ",".join(header) + "\n" + ",".join(values)


# -- stats ------------------------------------------------------------------

def text_bars(items, width=40) -> str:
    """Aligned ``name | #### count`` lines scaled to the largest count."""
    items = list(items)
    top = max((c for _, c in items), default=0) or 1
    pad = max((len(n) for n, _ in items), default=0)
    return "\n".join(f"{n:<{pad}} | {'#' * round(width * c / top):<{width}} {c}" for n, c in items)


def cmd_stats(manifest, out_dir=".", figures=True):
    """Per-level and per-scene counts; returns ``(level_counts, scene_counts, text)``."""
    records = load_manifest(manifest)
    levels = class_distribution(records)
    scenes = scene_distribution(records)
    text = "\n".join([
        f"records: {len(records)}", "", "level distribution",
        text_bars((LevelLabel(i).display, c) for i, c in enumerate(levels)), "", "scene distribution",
        text_bars((f"{s.english} ({s.value})", c) for s, c in scenes.items()),
    ])
    with staged_output(out_dir) as stage:
        write_distribution_csv(stage / "level_distribution.csv", levels)
        scene_lines = ["scene_name,count"] + [f"{s.value},{c}" for s, c in scenes.items()]
        _write_text(stage / "scene_distribution.csv", "\n".join(scene_lines) + "\n")
        _write_text(stage / "stats.txt", text + "\n")
        if figures:
            plotting.plot_class_distribution(levels, stage / "level_distribution.png")
    return levels, scenes, text


# -- gradcheck --------------------------------------------------------------

def family_kinds(spec: ArchSpec) -> set[str]:
    net = build(spec)
    return {n.layer.kind for n in net.nodes}


def cmd_gradcheck(family=None, scale=DESK_SCALE, seed=0, suite=None):
    """Finite-difference check of every differentiable layer kind (of ``family`` if given).

    Returns ``(lines, passed)``; each kind appears exactly once.
    """
    kinds = None
    channels = 3
    if family is not None:
        spec = ArchSpec(family, scale, 64)
        kinds = family_kinds(spec)
        channels = min(4, max(2, spec.channels(16)))
    results = run_suite(kinds, seeds=range(seed, seed + 5), channels=channels, suite=suite)
    lines = [f"{'kind':<16} {'max_rel_err':>12} {'threshold':>10}  status"]
    for kind in sorted(results):
        err, ok = results[kind]
        lines.append(f"{kind:<16} {err:>12.3e} {threshold_for(kind):>10.0e}  {'PASS' if ok else 'FAIL'}")
    return lines, all(ok for _, ok in results.values())


# -- synth / pretrain -------------------------------------------------------

def cmd_synth(out_dir, per_class=20, side=DESK_INPUT_SIZE, seed=0, task="level-5", label_noise=0.0):
    if not 0 <= label_noise <= 1:
        raise ConfigError(f"label noise must lie in [0, 1], got {label_noise}")
    with staged_output(out_dir) as stage:
        records = synth_dataset(per_class, side, seed, stage, task, label_noise)
    return records


def source_path(out_dir, family) -> Path:
    return Path(out_dir) / f"{family}_source.ckpt"


def source_config(seed, epochs=30, lr=0.01, batch_size=20) -> TrainConfig:
    return TrainConfig(epochs=epochs, learning_rate=lr, batch_size=batch_size, seed=seed)


def cmd_pretrain(family, out_dir=".", seed=0, scale=DESK_SCALE, input_size=DESK_INPUT_SIZE,
                 k=SOURCE_CLASSES, per_class=30, epochs=30, lr=0.01, batch_size=20, figures=True):
    """Train a source checkpoint on the synthetic ``source-task-k`` problem."""
    spec = make_spec(family, scale, input_size)
    cfg = source_config(seed, epochs, lr, batch_size)
    result = pretrain_source(family, spec, seed, k, per_class, cfg)
    with staged_output(out_dir) as stage:
        save_checkpoint(result.checkpoint, source_path(stage, family))
        result.history.write_csv(stage / f"{family}_source_history.csv")
        if figures:
            plotting.plot_history(result.history, stage / f"{family}_source_history.png",
                                  f"{DISPLAY_NAMES[family]} source-task-{k}")
    return result


# -- grid -------------------------------------------------------------------

@dataclass
class CellResult:
    family: str
    regime: str
    accuracy: float | None = None
    adjacent_accuracy: float | None = None
    best_epoch: int | None = None
    runtime: float = 0.0
    status: str = "ok"
    run: RunResult | None = field(default=None, repr=False)


@dataclass
class GridResult:
    cells: dict

    def accuracy_table(self) -> dict:
        return {(DISPLAY_NAMES[f], REGIME_TITLES[r]): c.accuracy
                for (f, r), c in self.cells.items() if c.accuracy is not None}


def _grid_cell(family, regime, spec, data, cfg, source):
    start = time.perf_counter()
    cell = CellResult(family, regime)
    try:
        run = run_cell(spec, data, cfg, source)
        cell.accuracy = run.checkpoint.val_accuracy
        cell.adjacent_accuracy = run.report.adjacent_accuracy
        cell.best_epoch = run.checkpoint.epoch
        cell.run = run
    except (SargazoError, FloatingPointError, MemoryError) as exc:
        cell.status = f"failed: {exc}"
        logger.warning("%s %s failed: %s", family, regime, exc)
    cell.runtime = time.perf_counter() - start
    return cell


def max_workers(requested: int) -> int:
    cap = os.environ.get("SGZ_THREADS")
    try:
        cap = int(cap) if cap else requested
    except ValueError:
        raise ConfigError(f"SGZ_THREADS must be an integer, got {cap!r}") from None
    return max(1, min(requested, cap))


def grid_csv(result: GridResult, families, regimes) -> str:
    lines = ["Network," + ",".join(REGIME_TITLES[r] for r in regimes)]
    for f in families:
        cells = [result.cells[(f, r)] for r in regimes]
        lines.append(DISPLAY_NAMES[f] + "," + ",".join(
            f"{c.accuracy:.4f}" if c.accuracy is not None else "failed" for c in cells))
    return "\n".join(lines) + "\n"


def grid_text(result: GridResult, families, regimes) -> str:
    rows = [[line for line in row.split(",")] for row in grid_csv(result, families, regimes).splitlines()]
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    out = []
    for k, row in enumerate(rows):
        out.append("  ".join(v.ljust(w) if i == 0 else v.rjust(w) for i, (v, w) in enumerate(zip(row, widths))))
        if k == 0:
            out.append("  ".join("-" * w for w in widths))
    return "\n".join(out) + "\n"


def cells_csv(result: GridResult) -> str:
    lines = ["family,regime,val_accuracy,adjacent_accuracy,best_epoch,status"]
    for (f, r), c in result.cells.items():
        acc = f"{c.accuracy:.6f}" if c.accuracy is not None else ""
        adj = f"{c.adjacent_accuracy:.6f}" if c.adjacent_accuracy is not None else ""
        epoch = str(c.best_epoch) if c.best_epoch is not None else ""
        status = c.status.replace(",", ";").replace("\n", " ")
        lines.append(f"{f},{r},{acc},{adj},{epoch},{status}")
    return "\n".join(lines) + "\n"


def ensure_sources(families, spec_for, out_dir, seed, source_epochs=30, per_class=30, k=SOURCE_CLASSES):
    """Load ``<out_dir>/sources/<family>_source.ckpt`` or pretrain it when missing."""
    sources = {}
    src_dir = Path(out_dir) / "sources"
    for family in families:
        path = source_path(src_dir, family)
        spec = spec_for[family]
        if path.exists():
            ck = load_checkpoint(path)
        else:
            logger.info("pretraining %s source checkpoint", family)
            ck = pretrain_source(family, spec, seed, k, per_class, source_config(seed, source_epochs)).checkpoint
            src_dir.mkdir(parents=True, exist_ok=True)
            save_checkpoint(ck, path)
        apply_regime(build(spec, seed), "FT", ck)  # raises CompatibilityError for a stale file
        sources[family] = ck
    return sources


def cmd_grid(manifest, out_dir=".", epochs=DESK_EPOCHS, lr=0.001, batch_size=100, seed=0, scale=DESK_SCALE,
             input_size=DESK_INPUT_SIZE, families=FAMILIES, regimes=REGIMES, augment=False,
             class_weighted=False, jobs=1, figures=True, source_epochs=30, progress=None) -> GridResult:
    """Train every (family, regime) cell on one shared split and write the accuracy table."""
    families, regimes = list(families), list(regimes)
    for f in families:
        if f not in FAMILIES:
            raise ConfigError(f"unknown family {f!r}")
    specs = {f: make_spec(f, scale, input_size) for f in families}
    cfgs = {r: TrainConfig(epochs, lr, batch_size, seed, r, "source" if r != "TS" else None, augment,
                           class_weighted) for r in regimes}
    data = prepare_data(manifest, input_size, seed)
    needs_source = [f for f in families if any(r != "TS" for r in regimes)]
    sources = ensure_sources(needs_source, specs, out_dir, seed, source_epochs)

    tasks = [(f, r) for f in families for r in regimes]
    cells = {}
    workers = max_workers(jobs)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {t: pool.submit(_grid_cell, t[0], t[1], specs[t[0]], data, cfgs[t[1]], sources.get(t[0]))
                       for t in tasks}
            for t in tasks:
                cells[t] = futures[t].result()
                if progress:
                    progress(cells[t])
    else:
        for f, r in tasks:
            cells[(f, r)] = _grid_cell(f, r, specs[f], data, cfgs[r], sources.get(f))
            if progress:
                progress(cells[(f, r)])

    result = GridResult(cells)
    with staged_output(out_dir) as stage:
        _write_text(stage / "grid.csv", grid_csv(result, families, regimes))
        _write_text(stage / "grid.txt", grid_text(result, families, regimes))
        _write_text(stage / "grid_cells.csv", cells_csv(result))
        for (f, r), c in cells.items():
            if c.run is not None:
                write_run(stage / "cells" / f"{f}_{r.lower()}", c.run, specs[f], data.stats, r, figures,
                          f"{DISPLAY_NAMES[f]} {REGIME_TITLES[r]}")
        if figures:
            plotting.plot_grid(result.accuracy_table(), [DISPLAY_NAMES[f] for f in families],
                               [REGIME_TITLES[r] for r in regimes], stage / "grid.png")
    return result


# -- synthetic transfer benchmark --------------------------------------------

def transfer_benchmark(family="vgg", seeds=range(5), side=32, per_class=20, epochs=50, lr=0.01, batch_size=20,
                       k=SOURCE_CLASSES, scale=DESK_SCALE):
    """Validation accuracy per regime and seed: ``source-task-k`` pretraining then the level-5 task.

    Each seed draws its own synthetic images, split, initialization and source
    network; all three regimes of a seed share them.
    """
    spec = ArchSpec(family, scale, side)
    accs = {r: [] for r in REGIMES}
    for seed in seeds:
        source = pretrain_source(family, spec, seed, k).checkpoint
        pixels, labels, _ = synth_images(per_class, side, seed, "level-5")
        raw = ImageSet(pixels.transpose(0, 3, 1, 2).astype(np.float32) / np.float32(255), labels)
        train_idx, val_idx = split_indices(labels, 0.8, seed)
        stats = NormStats.from_images(raw.subset(train_idx).images)
        data = SplitData(raw.subset(train_idx).normalized(stats), raw.subset(val_idx).normalized(stats),
                         stats, len(labels))
        for regime in REGIMES:
            cfg = TrainConfig(epochs, lr, batch_size, seed, regime, "source" if regime != "TS" else None)
            net = apply_regime(build(spec, seed), regime, source if regime != "TS" else None)
            ck, _ = train(net, data.train, data.val, cfg)
            accs[regime].append(ck.val_accuracy)
    return accs
