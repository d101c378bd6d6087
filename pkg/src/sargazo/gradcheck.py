"""Central finite-difference check of layer backward passes."""
from __future__ import annotations

import copy

import numpy as np

from .layers import (TRAIN, BatchNorm, Concat, Conv2D, Dense, Dropout, Flatten, GlobalAvgPool, Layer,
                     MaxPool2D, ReLU, ResidualAdd, SoftmaxCEHead, softmax_ce)


def relative_error(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return np.abs(a - b) / denom


def distinct_input(shape, rng, epsilon=1e-3):
    """Random values that are pairwise far apart and bounded away from zero.

    Keeps max-pool argmax and ReLU gates stable under +-epsilon perturbation.
    """
    n = int(np.prod(shape))
    step = max(0.9 / n, 4 * epsilon)
    magnitude = 0.1 + rng.permutation(n) * step
    sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return (sign * magnitude).reshape(shape)


def _as_float64(layer: Layer) -> Layer:
    probe = copy.deepcopy(layer)
    probe.params = {k: v.astype(np.float64) for k, v in probe.params.items()}
    probe.buffers = {k: v.astype(np.float64) for k, v in probe.buffers.items()}
    return probe


def grad_check(layer: Layer, input_shape, epsilon: float = 1e-3, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``input_shape`` includes the batch axis; for multi-input layers pass a list
    of shapes. The layer is probed on a float64 copy in train mode, with the
    random stream reset before each evaluation so dropout masks stay fixed.
    The scalar objective is ``sum(output * r)`` for a random ``r``, or the
    cross-entropy loss itself for the softmax head.
    """
    rng = np.random.default_rng(seed)
    probe = _as_float64(layer)
    shapes = list(input_shape) if probe.multi_input else [tuple(input_shape)]
    xs = [distinct_input(s, rng, epsilon) for s in shapes]
    is_head = probe.kind == "softmax-ce-head"

    if is_head:
        labels = rng.integers(0, shapes[0][-1], size=shapes[0][0])

        def objective():
            return softmax_ce(xs[0], labels)[0]

        _, dx = softmax_ce(xs[0], labels)
        analytic_inputs, analytic_params = [dx], {}
    else:
        def run():
            arg = xs if probe.multi_input else xs[0]
            return probe.forward(arg, TRAIN, rng=np.random.default_rng(seed + 1))

        out, cache = run()
        weights = rng.standard_normal(out.shape)

        def objective():
            return float((run()[0] * weights).sum())

        dx, analytic_params = probe.backward(weights, cache)
        analytic_inputs = list(dx) if probe.multi_input else [dx]

    worst = 0.0

    def numeric(arr, idx):
        old = arr[idx]
        arr[idx] = old + epsilon
        plus = objective()
        arr[idx] = old - epsilon
        minus = objective()
        arr[idx] = old
        return (plus - minus) / (2 * epsilon)

    for x, ana in zip(xs, analytic_inputs):
        for idx in np.ndindex(x.shape):
            worst = max(worst, float(relative_error(ana[idx], numeric(x, idx))))
    for name, p in probe.params.items():
        ana = analytic_params[name]
        for idx in np.ndindex(p.shape):
            worst = max(worst, float(relative_error(ana[idx], numeric(p, idx))))
    return worst


THRESHOLDS = {"batchnorm": 1e-2}
DEFAULT_THRESHOLD = 1e-3


def threshold_for(kind: str) -> float:
    return THRESHOLDS.get(kind, DEFAULT_THRESHOLD)


def layer_suite(channels: int = 3, seed: int = 0):
    """Small instance and input shape for every differentiable layer kind."""
    rng = np.random.default_rng(seed)
    c = channels
    return {
        "conv": (Conv2D(c, 4, 3, stride=1, padding=1, rng=rng), (2, c, 5, 5)),
        "dense": (Dense(6, 4, rng=rng), (3, 6)),
        "relu": (ReLU(), (2, c, 4, 4)),
        "maxpool": (MaxPool2D(3, 2), (2, c, 7, 7)),
        "avgpool": (GlobalAvgPool(), (2, c, 3, 3)),
        "dropout": (Dropout(0.5), (2, c, 4, 4)),
        "batchnorm": (BatchNorm(c), (4, c, 3, 3)),
        "flatten": (Flatten(), (2, c, 2, 2)),
        "concat": (Concat(), [(2, c, 3, 3), (2, 2, 3, 3)]),
        "residual-add": (ResidualAdd(), [(2, c, 3, 3), (2, c, 3, 3)]),
        "softmax-ce-head": (SoftmaxCEHead(5), (4, 5)),
    }


def run_suite(kinds=None, seeds=range(5), channels: int = 3, suite=None):
    """``{kind: (worst error over seeds, passed)}`` for each requested kind."""
    results = {}
    for seed in seeds:
        layers = suite(seed) if suite is not None else layer_suite(channels, seed)
        for kind, (layer, shape) in layers.items():
            if kinds is not None and kind not in kinds:
                continue
            err = grad_check(layer, shape, seed=seed)
            results[kind] = max(results.get(kind, 0.0), err)
    return {k: (e, e <= threshold_for(k)) for k, e in results.items()}
