"""Width-scalable AlexNet, GoogLeNet, VGG16 and ResNet18 builders."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from .errors import ConfigError, ShapeError
from .graph import INPUT, NetworkGraph, Node
from .layers import (BatchNorm, Concat, Conv2D, Dense, Dropout, Flatten, GlobalAvgPool,
                     MaxPool2D, ReLU, ResidualAdd, SoftmaxCEHead)

FAMILIES = ("alexnet", "googlenet", "resnet", "vgg")
DISPLAY_NAMES = {"alexnet": "AlexNet", "googlenet": "GoogleNet", "resnet": "ResNet18", "vgg": "VGG16"}

VGG16_BLOCKS = ((2, 64), (2, 128), (3, 256), (3, 512), (3, 512))
ALEXNET_CONVS = ((96, 11, 4, 2), (256, 5, 1, 2), (384, 3, 1, 1), (384, 3, 1, 1), (256, 3, 1, 1))
# (1x1, 3x3 reduce, 3x3, 5x5 reduce, 5x5, pool proj) per inception module
GOOGLENET_MODULES = (
    ("3a", (64, 96, 128, 16, 32, 32)),
    ("3b", (128, 128, 192, 32, 96, 64)),
    "pool",
    ("4a", (192, 96, 208, 16, 48, 64)),
    ("4b", (160, 112, 224, 24, 64, 64)),
    ("4c", (128, 128, 256, 24, 64, 64)),
    ("4d", (112, 144, 288, 32, 64, 64)),
    ("4e", (256, 160, 320, 32, 128, 128)),
    "pool",
    ("5a", (256, 160, 320, 32, 128, 128)),
    ("5b", (384, 192, 384, 48, 128, 128)),
)
RESNET18_STAGES = ((64, 1), (128, 2), (256, 2), (512, 2))
DEFAULT_DROPOUT = {"alexnet": 0.5, "googlenet": 0.4, "vgg": 0.0, "resnet": 0.0}


def parse_scale(value) -> Fraction:
    try:
        scale = Fraction(str(value)).limit_denominator(1 << 16)
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"width scale {value!r} is not a number or fraction") from None
    if scale <= 0:
        raise ConfigError(f"width scale must be positive, got {value!r}")
    return scale


@dataclass(frozen=True)
class ArchSpec:
    family: str
    width_scale: Fraction = Fraction(1, 8)
    input_size: int = 64
    num_classes: int = 5
    dropout: float | None = None
    in_channels: int = 3

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}; choose from {', '.join(FAMILIES)}")
        object.__setattr__(self, "width_scale", parse_scale(self.width_scale))
        if self.input_size < 1 or self.num_classes < 1 or self.in_channels < 1:
            raise ConfigError("input_size, num_classes and in_channels must be positive")

    @property
    def dropout_rate(self) -> float:
        return DEFAULT_DROPOUT[self.family] if self.dropout is None else float(self.dropout)

    def channels(self, base: int) -> int:
        return max(1, math.floor(base * self.width_scale + Fraction(1, 2)))

    def canonical(self) -> str:
        return (f"family={self.family};width_scale={self.width_scale};input_size={self.input_size};"
                f"num_classes={self.num_classes};in_channels={self.in_channels}")

    def with_classes(self, k: int) -> "ArchSpec":
        return replace(self, num_classes=k)


class _Builder:
    """Appends nodes while tracking shapes so layer sizes can be derived."""

    def __init__(self, spec: ArchSpec, seed: int):
        self.spec = spec
        self.rng = np.random.default_rng(seed)
        self.nodes: list[Node] = []
        self.shapes = {INPUT: (spec.in_channels, spec.input_size, spec.input_size)}
        self.last = INPUT
        self.head_start = None

    def add(self, name, layer, inputs=None):
        inputs = list(inputs) if inputs is not None else [self.last]
        ins = [self.shapes[s] for s in inputs]
        try:
            shape = layer.output_shape(ins if layer.multi_input else ins[0])
        except ShapeError as exc:
            raise ConfigError(f"{self.spec.family} at input {self.spec.input_size}: node {name!r}: {exc}") from None
        self.nodes.append(Node(name, layer, inputs))
        self.shapes[name] = tuple(shape)
        self.last = name
        return name

    def conv(self, name, out_ch, k, stride=1, pad=0, src=None, relu=True, bn=False):
        src = src or self.last
        layer = Conv2D(self.shapes[src][0], out_ch, k, stride, pad, rng=self.rng)
        out = self.add(name, layer, [src])
        if bn:
            out = self.add(f"{name}.bn", BatchNorm(out_ch))
        if relu:
            out = self.add(f"{name}.relu", ReLU())
        return out

    def dense(self, name, out, relu=True, init="he"):
        layer = Dense(self.shapes[self.last][0], out, rng=self.rng, init=init)
        node = self.add(name, layer)
        if relu:
            node = self.add(f"{name}.relu", ReLU())
        return node

    def mark_head(self):
        self.head_start = len(self.nodes)

    def finish(self):
        self.dense("classifier", self.spec.num_classes, relu=False, init="glorot")
        self.add("softmax", SoftmaxCEHead(self.spec.num_classes))
        return NetworkGraph(self.nodes, self.shapes[INPUT], self.spec.num_classes,
                            self.head_start, arch=self.spec)


def _expect(spec, family):
    if spec.family != family:
        raise ConfigError(f"builder for {family} got spec for {spec.family}")


def build_vgg(spec: ArchSpec, seed: int = 0) -> NetworkGraph:
    """Five 3x3-conv blocks of multiplicity (2, 2, 3, 3, 3), each closed by a 2x2 max-pool,
    then three dense layers."""
    _expect(spec, "vgg")
    b = _Builder(spec, seed)
    for i, (reps, base) in enumerate(VGG16_BLOCKS, start=1):
        for j in range(1, reps + 1):
            b.conv(f"block{i}.conv{j}", spec.channels(base), 3, pad=1)
        b.add(f"block{i}.pool", MaxPool2D(2, 2))
    b.add("flatten", Flatten())
    b.mark_head()
    rate = spec.dropout_rate
    for i in (1, 2):
        b.dense(f"fc{i}", spec.channels(4096))
        if rate > 0:
            b.add(f"fc{i}.dropout", Dropout(rate))
    return b.finish()


def build_alexnet(spec: ArchSpec, seed: int = 0) -> NetworkGraph:
    """Five convolutions (overlapping 3/2 max-pool after 1, 2 and 5) and three dense layers,
    dropout ahead of the first two."""
    _expect(spec, "alexnet")
    b = _Builder(spec, seed)
    for i, (base, k, stride, pad) in enumerate(ALEXNET_CONVS, start=1):
        b.conv(f"conv{i}", spec.channels(base), k, stride, pad)
        if i in (1, 2, 5):
            b.add(f"pool{i}", MaxPool2D(3, 2))
    b.add("flatten", Flatten())
    b.mark_head()
    rate = spec.dropout_rate
    for i in (1, 2):
        b.add(f"fc{i}.dropout", Dropout(rate))
        b.dense(f"fc{i}", spec.channels(4096))
    return b.finish()


def _inception(b: _Builder, name, widths):
    c1, r3, c3, r5, c5, pp = (b.spec.channels(w) for w in widths)
    src = b.last
    br1 = b.conv(f"{name}.1x1", c1, 1, src=src)
    b.conv(f"{name}.3x3r", r3, 1, src=src)
    br3 = b.conv(f"{name}.3x3", c3, 3, pad=1)
    b.conv(f"{name}.5x5r", r5, 1, src=src)
    br5 = b.conv(f"{name}.5x5", c5, 5, pad=2)
    b.add(f"{name}.pool", MaxPool2D(3, 1, 1), [src])
    brp = b.conv(f"{name}.poolproj", pp, 1)
    return b.add(f"{name}.concat", Concat(), [br1, br3, br5, brp])


def build_googlenet(spec: ArchSpec, seed: int = 0) -> NetworkGraph:
    """Stem, nine inception modules laid out 2 / pool / 5 / pool / 2, global average pool,
    dropout and a single dense classifier."""
    _expect(spec, "googlenet")
    b = _Builder(spec, seed)
    b.conv("stem.conv1", spec.channels(64), 7, 2, 3)
    b.add("stem.pool1", MaxPool2D(3, 2, 1))
    b.conv("stem.conv2", spec.channels(64), 1)
    b.conv("stem.conv3", spec.channels(192), 3, pad=1)
    b.add("stem.pool2", MaxPool2D(3, 2, 1))
    pools = 0
    for item in GOOGLENET_MODULES:
        if item == "pool":
            pools += 1
            b.add(f"pool{pools + 2}", MaxPool2D(3, 2, 1))
        else:
            _inception(b, f"inception{item[0]}", item[1])
    b.add("avgpool", GlobalAvgPool())
    if spec.dropout_rate > 0:
        b.add("dropout", Dropout(spec.dropout_rate))
    b.mark_head()
    return b.finish()


def build_resnet(spec: ArchSpec, seed: int = 0) -> NetworkGraph:
    """ResNet18 layout: 3x3 stem, four stages of two basic blocks (strides 1, 2, 2, 2),
    conv-BN-ReLU throughout, projection shortcuts on shape change."""
    _expect(spec, "resnet")
    b = _Builder(spec, seed)
    x = b.conv("stem", spec.channels(64), 3, 1, 1, bn=True)
    for s, (base, first_stride) in enumerate(RESNET18_STAGES, start=1):
        width = spec.channels(base)
        for blk in (1, 2):
            stride = first_stride if blk == 1 else 1
            name = f"stage{s}.block{blk}"
            b.conv(f"{name}.conv1", width, 3, stride, 1, src=x, bn=True)
            branch = b.conv(f"{name}.conv2", width, 3, 1, 1, bn=True, relu=False)
            skip = x
            if stride != 1 or b.shapes[x][0] != width:
                skip = b.conv(f"{name}.proj", width, 1, stride, 0, src=x, bn=True, relu=False)
            b.add(f"{name}.add", ResidualAdd(), [branch, skip])
            x = b.add(f"{name}.relu", ReLU())
    b.add("avgpool", GlobalAvgPool())
    b.mark_head()
    return b.finish()


BUILDERS = {"alexnet": build_alexnet, "googlenet": build_googlenet, "resnet": build_resnet,
            "vgg": build_vgg}


def build(spec: ArchSpec, seed: int = 0) -> NetworkGraph:
    return BUILDERS[spec.family](spec, seed)
