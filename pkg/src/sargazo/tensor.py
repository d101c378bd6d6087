"""Dense float32 kernels.

Tensors are plain ``numpy.ndarray`` objects of dtype float32 in channel-first
layout. Image-shaped kernels accept either a single image ``(C, H, W)`` or a
batch ``(N, C, H, W)`` and return the same rank they were given.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

DTYPE = np.float32


def tensor_new(shape: Sequence[int], constant: float | None = None,
               uniform: tuple[float, float] | None = None, seed: int | None = None) -> np.ndarray:
    """Allocate a float32 tensor.

    With no fill argument the tensor is zero-filled. ``constant`` fills every
    element with one value; ``uniform=(a, b)`` draws from U[a, b) with a
    generator seeded by ``seed`` so repeated calls give identical data.
    """
    shape = tuple(int(d) for d in shape)
    if not shape or any(d < 1 for d in shape):
        raise ShapeError(f"invalid shape {shape}: need at least one dimension, all >= 1")
    if constant is not None and uniform is not None:
        raise ValueError("give at most one of constant= and uniform=")
    if uniform is not None:
        low, high = uniform
        return np.random.default_rng(seed).uniform(low, high, size=shape).astype(DTYPE)
    if constant is not None:
        return np.full(shape, constant, dtype=DTYPE)
    return np.zeros(shape, dtype=DTYPE)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def add_elementwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}")
    return a + b


def concat_channels(inputs: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenate along the channel axis (axis 0 for images, 1 for batches)."""
    if len(inputs) == 0:
        raise ShapeError("concat_channels needs at least one input")
    ndim = inputs[0].ndim
    if ndim not in (3, 4):
        raise ShapeError(f"concat_channels expects (C,H,W) or (N,C,H,W), got {inputs[0].shape}")
    axis = ndim - 3
    ref = inputs[0].shape
    for t in inputs[1:]:
        if t.ndim != ndim or t.shape[:axis] != ref[:axis] or t.shape[axis + 1:] != ref[axis + 1:]:
            raise ShapeError(f"concat_channels spatial/batch mismatch: {ref} vs {t.shape}")
    return np.concatenate(inputs, axis=axis)


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


@dataclass(frozen=True)
class ConvParams:
    """Kernel ``(out, in, kh, kw)``, bias ``(out,)``, stride and symmetric zero padding."""

    kernel: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.kernel.ndim != 4:
            raise ShapeError(f"kernel must be (out, in, kh, kw), got {self.kernel.shape}")
        if self.bias.shape != (self.kernel.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match {self.kernel.shape[0]} output channels")
        if self.stride < 1 or self.padding < 0:
            raise ShapeError(f"stride must be >= 1 and padding >= 0, got {self.stride}, {self.padding}")

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel.shape[2:]
        ho = conv_output_size(h, kh, self.stride, self.padding)
        wo = conv_output_size(w, kw, self.stride, self.padding)
        if ho < 1 or wo < 1:
            raise ShapeError(f"convolution output would be {ho}x{wo} for input {h}x{w}")
        return ho, wo


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected (C,H,W) or (N,C,H,W), got {x.shape}")


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Unfold a batch into receptive-field columns.

    The result has shape ``(kh*kw*C, N*Ho*Wo)`` with rows ordered
    (kernel row, kernel column, channel) and columns ordered (n, y, x).
    """
    n, c, h, w = x.shape
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    xt = x.transpose(1, 0, 2, 3)
    cols = np.empty((kh, kw, c, n, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[i, j] = xt[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(kh * kw * c, n * ho * wo)


def col2im(dcols: np.ndarray, x_shape: tuple, kh: int, kw: int, stride: int, padding: int,
           ho: int, wo: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add column gradients back to ``x_shape``."""
    n, c, h, w = x_shape
    d = dcols.reshape(kh, kw, c, n, ho, wo)
    dx = np.zeros((c, n, h + 2 * padding, w + 2 * padding), dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += d[i, j]
    return dx[:, :, padding:padding + h, padding:padding + w].transpose(1, 0, 2, 3)


def _kernel_matrix(kernel: np.ndarray) -> np.ndarray:
    o = kernel.shape[0]
    return kernel.transpose(0, 2, 3, 1).reshape(o, -1)


def conv2d_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, stride: int,
                   padding: int) -> tuple[np.ndarray, np.ndarray]:
    """Batched cross-correlation. Returns the output and the column matrix for backward."""
    n, c, h, w = x.shape
    o, ci, kh, kw = kernel.shape
    if c != ci:
        raise ShapeError(f"input has {c} channels, kernel expects {ci}")
    ho, wo = conv_output_size(h, kh, stride, padding), conv_output_size(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"convolution output would be {ho}x{wo} for input {h}x{w}")
    cols = im2col(x, kh, kw, stride, padding)
    out = _kernel_matrix(kernel) @ cols
    out += bias[:, None]
    return out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3), cols


def conv2d_backward(dout: np.ndarray, cols: np.ndarray, x_shape: tuple, kernel: np.ndarray,
                    stride: int, padding: int, need_dx: bool = True):
    """Gradients w.r.t. input (optional), kernel and bias."""
    o, c, kh, kw = kernel.shape
    n, _, ho, wo = dout.shape
    d = np.ascontiguousarray(dout.transpose(1, 0, 2, 3)).reshape(o, -1)
    dkernel = (d @ cols.T).reshape(o, kh, kw, c).transpose(0, 3, 1, 2)
    dbias = d.sum(axis=1)
    dx = None
    if need_dx:
        dcols = _kernel_matrix(kernel).T @ d
        dx = col2im(dcols, x_shape, kh, kw, stride, padding, ho, wo)
    return dx, np.ascontiguousarray(dkernel), dbias


def conv2d(x: np.ndarray, p: ConvParams) -> np.ndarray:
    xb, single = _as_batch(x)
    if xb.shape[1] != p.kernel.shape[1]:
        raise ShapeError(f"input has {xb.shape[1]} channels, kernel expects {p.kernel.shape[1]}")
    p.output_hw(*xb.shape[2:])
    out, _ = conv2d_forward(xb, p.kernel, p.bias, p.stride, p.padding)
    out = np.ascontiguousarray(out)
    return out[0] if single else out


def maxpool2d(x: np.ndarray, window: int, stride: int, padding: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Windowed maximum.

    Returns the pooled tensor and, for each output element, the flat index
    into ``x`` of the element it was taken from. Ties resolve to the first
    element of the window in row-major order. Padding is implicit ``-inf``.
    """
    xb, single = _as_batch(x)
    n, c, h, w = xb.shape
    if window < 1 or stride < 1 or padding < 0 or padding >= window:
        raise ShapeError(f"bad pooling hyperparameters window={window} stride={stride} padding={padding}")
    ho, wo = conv_output_size(h, window, stride, padding), conv_output_size(w, window, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"pooling window {window} larger than padded input {h}x{w}")
    xp = xb
    if padding:
        xp = np.pad(xb, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=-np.inf)
    win = sliding_window_view(xp, (window, window), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    flat = win.reshape(n, c, ho, wo, window * window)
    local = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, local[..., None], axis=-1)[..., 0]
    rows = np.arange(ho)[:, None] * stride + local // window - padding
    cols = np.arange(wo)[None, :] * stride + local % window - padding
    plane = (np.arange(n)[:, None] * c + np.arange(c)[None, :])[:, :, None, None]
    index = (plane * h + rows) * w + cols
    if single:
        return out[0], index[0]
    return out, index


def maxpool2d_backward(dout: np.ndarray, index: np.ndarray, x_shape: tuple) -> np.ndarray:
    """Route each upstream value to its recorded source index (summing overlaps)."""
    size = int(np.prod(x_shape))
    dx = np.bincount(index.ravel(), weights=dout.ravel(), minlength=size)
    return dx.astype(dout.dtype).reshape(x_shape)
