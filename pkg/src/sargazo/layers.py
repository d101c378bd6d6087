"""Differentiable layers with explicit forward caches.

Every layer works on batches: images are ``(N, C, H, W)`` and feature vectors
``(N, F)``. ``forward`` returns ``(output, cache)``; the cache is ``None`` in
eval mode and must be handed back unchanged to ``backward``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import tensor as T
from .errors import ConfigError, LabelError, ShapeError, StateError

TRAIN = "train"
EVAL = "eval"


@dataclass
class ForwardCache:
    owner: int
    out_shape: tuple
    data: dict = field(default_factory=dict)


def _check_mode(mode):
    if mode not in (TRAIN, EVAL):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")


class Layer:
    kind = "layer"
    multi_input = False

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.frozen = False

    def hyper(self) -> dict[str, Any]:
        return {}

    def output_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x, mode=EVAL, rng=None):
        raise NotImplementedError

    def backward(self, upstream, cache):
        raise NotImplementedError

    @property
    def trainable(self) -> bool:
        return bool(self.params) and not self.frozen

    def zero_grads(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def _cache(self, out, **data):
        return ForwardCache(id(self), out.shape, data)

    def _open(self, upstream, cache):
        if cache is None:
            raise StateError(f"{self.kind}: backward needs the cache of a train-mode forward")
        if cache.owner != id(self):
            raise StateError(f"{self.kind}: cache belongs to a different layer")
        if tuple(upstream.shape) != tuple(cache.out_shape):
            raise StateError(f"{self.kind}: upstream shape {upstream.shape} != forward output {cache.out_shape}")
        return cache.data

    def _store(self, grads):
        self.grads = grads
        return grads

    def __repr__(self):
        hp = ", ".join(f"{k}={v}" for k, v in self.hyper().items())
        return f"{type(self).__name__}({hp})"


def he_uniform(rng, shape, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(T.DTYPE)


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(T.DTYPE)


class Conv2D(Layer):
    kind = "conv"

    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0, rng=None):
        super().__init__()
        if min(in_channels, out_channels, kernel_size, stride) < 1 or padding < 0:
            raise ConfigError(f"bad conv settings {in_channels}->{out_channels} k={kernel_size} "
                              f"s={stride} p={padding}")
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel_size, self.stride, self.padding = kernel_size, stride, padding
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        fan_in = in_channels * kernel_size * kernel_size
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = {"weight": he_uniform(rng, shape, fan_in),
                       "bias": np.zeros(out_channels, dtype=T.DTYPE)}
        self.zero_grads()

    def hyper(self):
        return {"in": self.in_channels, "out": self.out_channels, "k": self.kernel_size,
                "stride": self.stride, "pad": self.padding}

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise ShapeError(f"conv expects ({self.in_channels}, H, W), got {tuple(in_shape)}")
        ho = T.conv_output_size(in_shape[1], self.kernel_size, self.stride, self.padding)
        wo = T.conv_output_size(in_shape[2], self.kernel_size, self.stride, self.padding)
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv output would be {ho}x{wo} for input {tuple(in_shape)}")
        return (self.out_channels, ho, wo)

    def forward(self, x, mode=EVAL, rng=None):
        _check_mode(mode)
        if x.ndim != 4:
            raise ShapeError(f"conv expects a batch (N, C, H, W), got {x.shape}")
        w, b = self.params["weight"], self.params["bias"]
        out, cols = T.conv2d_forward(x, w.astype(x.dtype, copy=False), b.astype(x.dtype, copy=False),
                                     self.stride, self.padding)
        if mode == EVAL:
            return out, None
        return out, self._cache(out, cols=cols, x_shape=x.shape)

    def backward(self, upstream, cache, need_dx=True):
        data = self._open(upstream, cache)
        w = self.params["weight"].astype(upstream.dtype, copy=False)
        dx, dw, db = T.conv2d_backward(upstream, data["cols"], data["x_shape"], w,
                                       self.stride, self.padding, need_dx=need_dx)
        return dx, self._store({"weight": dw, "bias": db})


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features, out_features, rng=None, init="he"):
        super().__init__()
        if in_features < 1 or out_features < 1:
            raise ConfigError(f"bad dense size {in_features}->{out_features}")
        self.in_features, self.out_features = in_features, out_features
        rng = rng if rng is not None else np.random.default_rng(0)
        shape = (in_features, out_features)
        if init == "he":
            weight = he_uniform(rng, shape, in_features)
        elif init == "glorot":
            weight = glorot_uniform(rng, shape, in_features, out_features)
        else:
            raise ConfigError(f"unknown init {init!r}")
        self.init = init
        self.params = {"weight": weight, "bias": np.zeros(out_features, dtype=T.DTYPE)}
        self.zero_grads()

    def hyper(self):
        return {"in": self.in_features, "out": self.out_features}

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.in_features,):
            raise ShapeError(f"dense expects ({self.in_features},), got {tuple(in_shape)}")
        return (self.out_features,)

    def forward(self, x, mode=EVAL, rng=None):
        _check_mode(mode)
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"dense expects (N, {self.in_features}), got {x.shape}")
        w, b = self.params["weight"], self.params["bias"]
        out = x @ w.astype(x.dtype, copy=False) + b.astype(x.dtype, copy=False)
        if mode == EVAL:
            return out, None
        return out, self._cache(out, x=x)

    def backward(self, upstream, cache, need_dx=True):
        x = self._open(upstream, cache)["x"]
        dw = x.T @ upstream
        db = upstream.sum(axis=0)
        dx = upstream @ self.params["weight"].astype(upstream.dtype, copy=False).T if need_dx else None
        return dx, self._store({"weight": dw, "bias": db})


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, mode=EVAL, rng=None):
        _check_mode(mode)
        out = np.maximum(x, 0)
        if mode == EVAL:
            return out, None
        return out, self._cache(out, mask=x > 0)

    def backward(self, upstream, cache, need_dx=True):
        mask = self._open(upstream, cache)["mask"]
        return upstream * mask, {}


class MaxPool2D(Layer):
    kind = "maxpool"

    def __init__(self, window, stride=None, padding=0):
        super().__init__()
        self.window = window
        self.stride = stride if stride is not None else window
        self.padding = padding

    def hyper(self):
        return {"window": self.window, "stride": self.stride, "pad": self.padding}

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"maxpool expects (C, H, W), got {tuple(in_shape)}")
        if self.padding >= self.window:
            raise ShapeError(f"maxpool padding {self.padding} must be smaller than window {self.window}")
        ho = T.conv_output_size(in_shape[1], self.window, self.stride, self.padding)
        wo = T.conv_output_size(in_shape[2], self.window, self.stride, self.padding)
        if ho < 1 or wo < 1:
            raise ShapeError(f"pooling window {self.window} larger than input {tuple(in_shape)}")
        return (in_shape[0], ho, wo)

    def forward(self, x, mode=EVAL, rng=None):
        _check_mode(mode)
        if x.ndim != 4:
            raise ShapeError(f"maxpool expects a batch (N, C, H, W), got {x.shape}")
        out, index = T.maxpool2d(x, self.window, self.stride, self.padding)
        if mode == EVAL:
            return out, None
        return out, self._cache(out, index=index, x_shape=x.shape)

    def backward(self, upstream, cache, need_dx=True):
        data = self._open(upstream, cache)
        return T.maxpool2d_backward(upstream, data["index"], data["x_shape"]), {}


class GlobalAvgPool(Layer):
    """Mean over the spatial axes: ``(N, C, H, W) -> (N, C)``."""

    kind = "avgpool"

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"avgpool expects (C, H, W), got {tuple(in_shape)}")
        return (in_shape[0],)

    def forward(self, x, mode=EVAL, rng=None):
        _check_mode(mode)
        out = x.mean(axis=(2, 3))
        if mode == EVAL:
            return out, None
        return out, self._cache(out, x_shape=x.shape)

    def backward(self, upstream, cache, need_dx=True):
        n, c, h, w = self._open(upstream, cache)["x_shape"]
        dx = np.broadcast_to((upstream / (h * w))[:, :, None, None], (n, c, h, w))
        return np.ascontiguousarray(dx), {}


class Dropout(Layer):
    """Inverted dropout: survivors are scaled by ``1/(1-rate)`` at train time."""

    kind = "dropout"

    def __init__(self, rate=0.5):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = float(rate)

    def hyper(self):
        return {"rate": self.rate}

    def forward(self, x, mode=EVAL, rng=None):
        _check_mode(mode)
        if mode == EVAL:
            return x, None
        if self.rate == 0.0:
            return x, self._cache(x, mask=None)
        if rng is None:
            raise StateError("dropout in train mode needs a random generator")
        keep = rng.random(x.shape) >= self.rate
        mask = keep.astype(x.dtype) / x.dtype.type(1.0 - self.rate)
        out = x * mask
        return out, self._cache(out, mask=mask)

    def backward(self, upstream, cache, need_dx=True):
        mask = self._open(upstream, cache)["mask"]
        return (upstream if mask is None else upstream * mask), {}


class BatchNorm(Layer):
    """Batch normalization over channels (4-D input) or features (2-D input).

    A frozen batch-norm normalizes with its running statistics in both modes
    and never updates them.
    """

    kind = "batchnorm"

    def __init__(self, num_features, momentum=0.9, eps=1e-5):
        super().__init__()
        self.num_features, self.momentum, self.eps = num_features, momentum, eps
        self.params = {"gamma": np.ones(num_features, dtype=T.DTYPE),
                       "beta": np.zeros(num_features, dtype=T.DTYPE)}
        self.buffers = {"running_mean": np.zeros(num_features, dtype=T.DTYPE),
                        "running_var": np.ones(num_features, dtype=T.DTYPE)}
        self.zero_grads()

    def hyper(self):
        return {"features": self.num_features, "momentum": self.momentum, "eps": self.eps}

    def output_shape(self, in_shape):
        if in_shape[0] != self.num_features:
            raise ShapeError(f"batchnorm expects {self.num_features} channels, got {tuple(in_shape)}")
        return tuple(in_shape)

    @staticmethod
    def _axes(x):
        if x.ndim == 4:
            return (0, 2, 3), (1, -1, 1, 1)
        if x.ndim == 2:
            return (0,), (1, -1)
        raise ShapeError(f"batchnorm expects 2-D or 4-D input, got {x.shape}")

    def forward(self, x, mode=EVAL, rng=None):
        _check_mode(mode)
        axes, view = self._axes(x)
        if x.shape[1] != self.num_features:
            raise ShapeError(f"batchnorm expects {self.num_features} channels, got {x.shape}")
        dt = x.dtype
        gamma = self.params["gamma"].astype(dt, copy=False).reshape(view)
        beta = self.params["beta"].astype(dt, copy=False).reshape(view)
        use_batch = mode == TRAIN and not self.frozen
        if use_batch:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.buffers["running_mean"] = (m * self.buffers["running_mean"] + (1 - m) * mean).astype(T.DTYPE)
            self.buffers["running_var"] = (m * self.buffers["running_var"] + (1 - m) * var).astype(T.DTYPE)
        else:
            mean = self.buffers["running_mean"].astype(dt)
            var = self.buffers["running_var"].astype(dt)
        inv_std = (1.0 / np.sqrt(var + dt.type(self.eps))).astype(dt)
        xhat = (x - mean.reshape(view)) * inv_std.reshape(view)
        out = xhat * gamma + beta
        if mode == EVAL:
            return out, None
        return out, self._cache(out, xhat=xhat, inv_std=inv_std, batch_stats=use_batch)

    def backward(self, upstream, cache, need_dx=True):
        data = self._open(upstream, cache)
        axes, view = self._axes(upstream)
        xhat, inv_std = data["xhat"], data["inv_std"]
        dgamma = (upstream * xhat).sum(axis=axes)
        dbeta = upstream.sum(axis=axes)
        grads = self._store({"gamma": dgamma, "beta": dbeta})
        if not need_dx:
            return None, grads
        gamma = self.params["gamma"].astype(upstream.dtype, copy=False).reshape(view)
        dxhat = upstream * gamma
        if not data["batch_stats"]:
            return dxhat * inv_std.reshape(view), grads
        m = upstream.size / self.num_features
        dx = (inv_std.reshape(view) / m) * (
            m * dxhat - dxhat.sum(axis=axes).reshape(view) - xhat * (dxhat * xhat).sum(axis=axes).reshape(view))
        return dx, grads


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, mode=EVAL, rng=None):
        _check_mode(mode)
        out = x.reshape(x.shape[0], -1)
        if mode == EVAL:
            return out, None
        return out, self._cache(out, x_shape=x.shape)

    def backward(self, upstream, cache, need_dx=True):
        return upstream.reshape(self._open(upstream, cache)["x_shape"]), {}


class Concat(Layer):
    """Channel concatenation of several branches (inception merge)."""

    kind = "concat"
    multi_input = True

    def output_shape(self, in_shapes):
        if not in_shapes:
            raise ShapeError("concat needs at least one input")
        spatial = {tuple(s[1:]) for s in in_shapes}
        if len(spatial) != 1 or any(len(s) != 3 for s in in_shapes):
            raise ShapeError(f"concat inputs disagree spatially: {[tuple(s) for s in in_shapes]}")
        return (sum(s[0] for s in in_shapes),) + tuple(in_shapes[0][1:])

    def forward(self, xs, mode=EVAL, rng=None):
        _check_mode(mode)
        out = T.concat_channels(list(xs))
        if mode == EVAL:
            return out, None
        return out, self._cache(out, splits=np.cumsum([x.shape[1] for x in xs])[:-1])

    def backward(self, upstream, cache, need_dx=True):
        splits = self._open(upstream, cache)["splits"]
        return np.split(upstream, splits, axis=1), {}


class ResidualAdd(Layer):
    kind = "residual-add"
    multi_input = True

    def output_shape(self, in_shapes):
        if len(in_shapes) != 2:
            raise ShapeError(f"residual-add takes exactly two inputs, got {len(in_shapes)}")
        a, b = (tuple(s) for s in in_shapes)
        if a != b:
            raise ShapeError(f"residual-add branches disagree: {a} vs {b}")
        return a

    def forward(self, xs, mode=EVAL, rng=None):
        _check_mode(mode)
        a, b = xs
        out = T.add_elementwise(a, b)
        if mode == EVAL:
            return out, None
        return out, self._cache(out)

    def backward(self, upstream, cache, need_dx=True):
        self._open(upstream, cache)
        return [upstream, upstream], {}


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_ce(logits: np.ndarray, labels, class_weights=None):
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``.

    Returns ``(loss, dlogits)``. With ``class_weights`` the mean is weighted by
    the weight of each sample's true class.
    """
    if logits.ndim != 2 or logits.shape[0] < 1:
        raise ShapeError(f"logits must be (batch, classes) with batch >= 1, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise LabelError(f"expected {n} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise LabelError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    nll = -logp[np.arange(n), labels]
    if class_weights is None:
        weights = np.full(n, 1.0 / n, dtype=logits.dtype)
    else:
        w = np.asarray(class_weights, dtype=logits.dtype)[labels]
        weights = w / w.sum()
    loss = float((weights * nll).sum())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1
    grad *= weights[:, None]
    return loss, grad.astype(logits.dtype, copy=False)


class SoftmaxCEHead(Layer):
    """Terminal node: softmax over class logits; the loss lives in :func:`softmax_ce`."""

    kind = "softmax-ce-head"

    def __init__(self, num_classes):
        super().__init__()
        self.num_classes = num_classes

    def hyper(self):
        return {"classes": self.num_classes}

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.num_classes,):
            raise ShapeError(f"head expects ({self.num_classes},) logits, got {tuple(in_shape)}")
        return (self.num_classes,)

    def forward(self, x, mode=EVAL, rng=None):
        _check_mode(mode)
        out = softmax(x)
        if mode == EVAL:
            return out, None
        return out, self._cache(out, probs=out)

    def backward(self, upstream, cache, need_dx=True):
        p = self._open(upstream, cache)["probs"]
        dx = p * (upstream - (upstream * p).sum(axis=1, keepdims=True))
        return dx, {}


LAYER_KINDS = ("conv", "dense", "relu", "maxpool", "avgpool", "dropout", "batchnorm",
               "flatten", "concat", "residual-add", "softmax-ce-head")
