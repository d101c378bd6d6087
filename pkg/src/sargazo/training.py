"""Mini-batch SGD, transfer-learning regimes and best-epoch selection."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .architectures import ArchSpec, build
from .checkpoint import Checkpoint
from .data.dataset import ImageSet, iterate_batches, split_indices
from .data.synth import synth_images
from .data.transforms import NormStats, augment_batch
from .errors import CompatibilityError, ConfigError, DivergenceError, LabelError
from .graph import NetworkGraph

logger = logging.getLogger(__name__)

REGIMES = ("FE", "FT", "TS")
REGIME_TITLES = {"FE": "F.E.", "FT": "F.T.", "TS": "T.S."}


def parse_regime(text: str) -> str:
    regime = str(text).strip().upper().replace(".", "")
    if regime not in REGIMES:
        raise ConfigError(f"unknown regime {text!r}; choose from fe, ft, ts")
    return regime


@dataclass
class TrainConfig:
    epochs: int = 500
    learning_rate: float = 0.001
    batch_size: int = 100
    seed: int = 0
    regime: str = "TS"
    source_checkpoint: str | None = None
    augment: bool = False
    class_weighted: bool = False

    def __post_init__(self):
        self.regime = parse_regime(self.regime)
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.regime in ("FE", "FT") and not self.source_checkpoint:
            raise ConfigError(f"regime {self.regime} needs a source checkpoint")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def val_accuracy(self) -> list[float]:
        return [r.val_acc for r in self.records]

    @property
    def train_accuracy(self) -> list[float]:
        return [r.train_acc for r in self.records]

    def best(self) -> EpochRecord:
        """Record with maximal validation accuracy, earliest on ties."""
        return max(self.records, key=lambda r: (r.val_acc, -r.epoch))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "train_acc", "val_acc"])
            for r in self.records:
                w.writerow([r.epoch, f"{r.train_loss:.8g}", f"{r.train_acc:.8g}", f"{r.val_acc:.8g}"])

    @classmethod
    def read_csv(cls, path) -> "TrainHistory":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        return cls([EpochRecord(int(r["epoch"]), float(r["train_loss"]), float(r["train_acc"]),
                                float(r["val_acc"])) for r in rows])


def sgd_step(params: dict, grads: dict, learning_rate: float) -> dict:
    """In place ``w <- w - lr * g`` for every tensor; returns ``params``."""
    for name, w in params.items():
        w -= np.asarray(learning_rate, dtype=w.dtype) * grads[name].astype(w.dtype, copy=False)
    return params


def head_source_classes(ck: Checkpoint) -> int:
    try:
        return int(ck.tensors["classifier.bias"].shape[0])
    except KeyError:
        raise CompatibilityError("source checkpoint has no classifier head tensor") from None


def apply_regime(net: NetworkGraph, regime: str, source: Checkpoint | None = None,
                 num_classes: int | None = None) -> NetworkGraph:
    """Prepare a freshly built network for one of the three training regimes.

    FE and FT copy every pre-head tensor from ``source`` and keep the new,
    randomly initialized classifier block; FE additionally freezes everything
    before the head. TS leaves the fresh initialization untouched.
    """
    regime = parse_regime(regime)
    if num_classes is not None and num_classes != net.num_classes:
        raise ConfigError(f"network was built for {net.num_classes} classes, not {num_classes}")
    net.set_frozen(False)
    if regime == "TS":
        return net
    if source is None:
        raise ConfigError(f"regime {regime} needs a source checkpoint")
    if net.arch is None:
        raise CompatibilityError("network has no architecture spec to check the source against")
    k = head_source_classes(source)
    expected = build(net.arch.with_classes(k)).fingerprint()
    if source.fingerprint != expected:
        raise CompatibilityError(f"source fingerprint {source.fingerprint:016x} does not match the "
                                 f"{net.arch.family} feature extractor (expected {expected:016x})")
    net.load_state_dict(source.tensors, only={n.name for n in net.feature_nodes()})
    if regime == "FE":
        net.freeze_features()
    return net


def class_weights(labels, num_classes):
    counts = np.bincount(labels, minlength=num_classes).astype(np.float64)
    weights = np.zeros(num_classes)
    present = counts > 0
    weights[present] = len(labels) / (present.sum() * counts[present])
    return weights.astype(np.float32)


def predict_labels(net: NetworkGraph, images: np.ndarray, batch_size: int = 100) -> np.ndarray:
    return np.argmax(net.logits(images, batch_size), axis=1)


def _snapshot(net):
    return {k: v.copy() for k, v in net.state_dict().items()}


def train(net: NetworkGraph, train_set: ImageSet, val_set: ImageSet, cfg: TrainConfig,
          on_epoch=None):
    """Run ``cfg.epochs`` epochs of mini-batch SGD.

    Returns the checkpoint of the epoch with the best validation accuracy
    (earliest on ties) and the full history. The network is left holding the
    best weights. A learning rate of zero trains nothing: all layers are held
    frozen, so batch-norm statistics stay put as well.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ConfigError("training and validation sets must be non-empty")
    for name, s in (("train", train_set), ("validation", val_set)):
        if s.labels.min() < 0 or s.labels.max() >= net.num_classes:
            raise LabelError(f"{name} labels outside [0, {net.num_classes})")
        if tuple(s.images.shape[1:]) != net.input_shape:
            raise ConfigError(f"{name} images are {s.images.shape[1:]}, network expects {net.input_shape}")

    saved_frozen = [n.layer.frozen for n in net.nodes]
    if cfg.learning_rate == 0:
        net.set_frozen(True)
    rng = np.random.default_rng(cfg.seed)
    weights = class_weights(train_set.labels, net.num_classes) if cfg.class_weighted else None
    history = TrainHistory()
    best_state, best_record = None, None
    try:
        for epoch in range(1, cfg.epochs + 1):
            total_loss, correct = 0.0, 0
            for b, idx in enumerate(iterate_batches(len(train_set), cfg.batch_size, rng)):
                x = train_set.images[idx]
                y = train_set.labels[idx]
                if cfg.augment:
                    x = augment_batch(x, rng)
                loss, logits = net.train_step(x, y, rng, weights)
                if not np.isfinite(loss):
                    raise DivergenceError(epoch, b, loss)
                for layer in net.trainable_layers():
                    sgd_step(layer.params, layer.grads, cfg.learning_rate)
                total_loss += loss * len(idx)
                correct += int((np.argmax(logits, axis=1) == y).sum())
            val_acc = float((predict_labels(net, val_set.images) == val_set.labels).mean())
            record = EpochRecord(epoch, total_loss / len(train_set), correct / len(train_set), val_acc)
            history.records.append(record)
            if best_record is None or val_acc > best_record.val_acc:
                best_record, best_state = record, _snapshot(net)
            logger.info("epoch %d loss %.4f train_acc %.4f val_acc %.4f",
                        epoch, record.train_loss, record.train_acc, val_acc)
            if on_epoch is not None:
                on_epoch(record)
    finally:
        for n, frozen in zip(net.nodes, saved_frozen):
            n.layer.frozen = frozen
    net.load_state_dict(best_state)
    best = Checkpoint(net.fingerprint(), best_state, best_record.epoch, best_record.val_acc)
    return best, history


@dataclass
class PretrainResult:
    checkpoint: Checkpoint
    history: TrainHistory
    stats: NormStats


def pretrain_source(family: str, spec: ArchSpec | None = None, seed: int = 0, k: int = 8,
                    n_per_class: int = 30, cfg: TrainConfig | None = None) -> PretrainResult:
    """Train ``family`` from scratch on the synthetic ``source-task-k`` problem.

    The resulting checkpoint carries a k-class head and serves as the source
    for the FE and FT regimes of the same architecture.
    """
    spec = spec or ArchSpec(family)
    if spec.family != family:
        raise ConfigError(f"spec family {spec.family} differs from {family}")
    src_spec = spec.with_classes(k)
    cfg = cfg or TrainConfig(epochs=30, learning_rate=0.01, batch_size=20, seed=seed)
    pixels, labels, _ = synth_images(n_per_class, spec.input_size, seed + 1000, f"source-task-{k}")
    raw = pixels.transpose(0, 3, 1, 2).astype(np.float32) / np.float32(255)
    train_idx, val_idx = split_indices(labels, 0.8, seed, stratified=True)
    data = ImageSet(raw, labels)
    train_raw, val_raw = data.subset(train_idx), data.subset(val_idx)
    stats = NormStats.from_images(train_raw.images)
    net = build(src_spec, seed)
    ck, history = train(net, train_raw.normalized(stats), val_raw.normalized(stats), cfg)
    logger.info("pretrained %s on source-task-%d: val_acc %.4f at epoch %d",
                family, k, ck.val_accuracy, ck.epoch)
    return PretrainResult(ck, history, stats)
