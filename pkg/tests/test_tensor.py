import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sargazo import tensor as T
from sargazo.errors import ShapeError


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float64)
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += float(a[i, k]) * float(b[k, j])
    return out


def naive_conv(x, kernel, bias, stride, padding):
    c, h, w = x.shape
    o, _, kh, kw = kernel.shape
    xp = np.zeros((c, h + 2 * padding, w + 2 * padding))
    xp[:, padding:padding + h, padding:padding + w] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((o, ho, wo))
    for f in range(o):
        for i in range(ho):
            for j in range(wo):
                win = xp[:, i * stride:i * stride + kh, j * stride:j * stride + kw]
                out[f, i, j] = (win * kernel[f]).sum() + bias[f]
    return out


def naive_pool(x, k, s):
    c, h, w = x.shape
    ho, wo = (h - k) // s + 1, (w - k) // s + 1
    out = np.zeros((c, ho, wo))
    idx = np.zeros((c, ho, wo), dtype=np.int64)
    for ch in range(c):
        for i in range(ho):
            for j in range(wo):
                best, where = -np.inf, None
                for di in range(k):
                    for dj in range(k):
                        v = x[ch, i * s + di, j * s + dj]
                        if v > best:
                            best, where = v, (ch * h + i * s + di) * w + j * s + dj
                out[ch, i, j], idx[ch, i, j] = best, where
    return out, idx


# tensor_new

def test_tensor_new_fills():
    assert np.array_equal(T.tensor_new([2, 2]), np.zeros((2, 2)))
    assert np.array_equal(T.tensor_new([3], constant=1.5), [1.5, 1.5, 1.5])
    a = T.tensor_new([4], uniform=(0, 1), seed=7)
    b = T.tensor_new([4], uniform=(0, 1), seed=7)
    assert a.dtype == np.float32
    assert np.array_equal(a, b)
    assert ((a >= 0) & (a < 1)).all()


@pytest.mark.parametrize("shape", [[], [0], [3, 0, 2]])
def test_tensor_new_rejects_bad_shapes(shape):
    with pytest.raises(ShapeError):
        T.tensor_new(shape)


# matmul / add / concat

def test_matmul_small_cases():
    assert np.array_equal(T.matmul(np.eye(2, dtype=np.float32), np.array([[3, 4], [5, 6]], np.float32)),
                          [[3, 4], [5, 6]])
    assert T.matmul(np.array([[1, 2]], np.float32), np.array([[3], [4]], np.float32))[0, 0] == 11


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((5, 7)).astype(np.float32)
    b = rng.standard_normal((7, 3)).astype(np.float32)
    np.testing.assert_allclose(T.matmul(a, b), naive_matmul(a, b), rtol=1e-5, atol=1e-5)


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        T.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_add_elementwise():
    assert np.array_equal(T.add_elementwise(np.array([1., 2.]), np.array([3., 4.])), [4, 6])
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    loop = np.array([[a[i, j] + b[i, j] for j in range(4)] for i in range(3)])
    np.testing.assert_array_equal(T.add_elementwise(a, b), loop)
    with pytest.raises(ShapeError):
        T.add_elementwise(a, b[:2])


def test_concat_channels():
    ones, twos = np.ones((1, 2, 2)), np.full((1, 2, 2), 2.0)
    out = T.concat_channels([ones, twos])
    assert out.shape == (2, 2, 2)
    assert (out[0] == 1).all() and (out[1] == 2).all()
    assert np.array_equal(T.concat_channels([ones]), ones)
    rng = np.random.default_rng(2)
    parts = [rng.standard_normal((c, 3, 3)) for c in (1, 4, 2)]
    out = T.concat_channels(parts)
    start = 0
    for p in parts:
        assert np.array_equal(out[start:start + len(p)], p)
        start += len(p)
    with pytest.raises(ShapeError):
        T.concat_channels([ones, np.ones((1, 3, 2))])
    with pytest.raises(ShapeError):
        T.concat_channels([])


# conv2d

def test_conv_worked_example():
    x = np.arange(1, 10, dtype=np.float32).reshape(1, 3, 3)
    p = T.ConvParams(np.ones((1, 1, 2, 2), np.float32), np.zeros(1, np.float32))
    assert np.array_equal(T.conv2d(x, p), [[[12, 16], [24, 28]]])


def test_conv_identity_and_zero_kernel():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 5, 4)).astype(np.float32)
    ident = T.ConvParams(np.ones((1, 1, 1, 1), np.float32), np.zeros(1, np.float32))
    assert np.array_equal(T.conv2d(x, ident), x)
    zero = T.ConvParams(np.zeros((2, 1, 3, 3), np.float32), np.array([0.5, -1.0], np.float32))
    out = T.conv2d(x, zero)
    assert (out[0] == 0.5).all() and (out[1] == -1.0).all()


@settings(max_examples=40, deadline=None)
@given(c=st.integers(1, 3), o=st.integers(1, 3), h=st.integers(3, 8), w=st.integers(3, 8),
       k=st.integers(1, 3), stride=st.integers(1, 3), pad=st.integers(0, 2), seed=st.integers(0, 2**16))
def test_conv_matches_sliding_window(c, o, h, w, k, stride, pad, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((c, h, w)).astype(np.float32)
    p = T.ConvParams(rng.standard_normal((o, c, k, k)).astype(np.float32),
                     rng.standard_normal(o).astype(np.float32), stride, pad)
    np.testing.assert_allclose(T.conv2d(x, p), naive_conv(x, p.kernel, p.bias, stride, pad), rtol=1e-5, atol=1e-5)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**16), a=st.floats(-2, 2), b=st.floats(-2, 2))
def test_conv_is_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(-1, 1, (2, 2, 6, 6)).astype(np.float32)
    p = T.ConvParams(rng.uniform(-1, 1, (3, 2, 3, 3)).astype(np.float32), np.zeros(3, np.float32), 1, 1)
    lhs = T.conv2d((a * x + b * y).astype(np.float32), p)
    np.testing.assert_allclose(lhs, a * T.conv2d(x, p) + b * T.conv2d(y, p), atol=1e-4)


def test_conv_errors():
    x = np.ones((2, 3, 3), np.float32)
    with pytest.raises(ShapeError):
        T.conv2d(x, T.ConvParams(np.ones((1, 3, 2, 2), np.float32), np.zeros(1, np.float32)))
    with pytest.raises(ShapeError):
        T.conv2d(x, T.ConvParams(np.ones((1, 2, 5, 5), np.float32), np.zeros(1, np.float32)))


def test_conv_backward_matches_finite_differences():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 2, 5, 5))
    kernel = rng.standard_normal((3, 2, 3, 3))
    bias = rng.standard_normal(3)
    out, cols = T.conv2d_forward(x, kernel, bias, 2, 1)
    r = rng.standard_normal(out.shape)
    dx, dk, db = T.conv2d_backward(r, cols, x.shape, kernel, 2, 1)

    def f():
        return (T.conv2d_forward(x, kernel, bias, 2, 1)[0] * r).sum()

    for arr, grad in ((x, dx), (kernel, dk), (bias, db)):
        for idx in list(np.ndindex(arr.shape))[::7]:
            old = arr[idx]
            arr[idx] = old + 1e-5
            up = f()
            arr[idx] = old - 1e-5
            down = f()
            arr[idx] = old
            assert grad[idx] == pytest.approx((up - down) / 2e-5, rel=1e-5, abs=1e-7)


# maxpool

def test_maxpool_worked_example():
    x = np.arange(1, 10, dtype=np.float32).reshape(1, 3, 3)
    out, idx = T.maxpool2d(x, 2, 1)
    assert np.array_equal(out, [[[5, 6], [8, 9]]])
    assert np.array_equal(x.ravel()[idx], out)


def test_maxpool_ties_pick_first_in_row_major():
    x = np.ones((1, 4, 4), np.float32)
    out, idx = T.maxpool2d(x, 2, 2)
    assert (out == 1).all()
    assert idx.ravel().tolist() == [0, 2, 8, 10]


def test_maxpool_unit_window_is_identity():
    x = np.random.default_rng(5).standard_normal((2, 3, 4)).astype(np.float32)
    assert np.array_equal(T.maxpool2d(x, 1, 1)[0], x)


@settings(max_examples=40, deadline=None)
@given(c=st.integers(1, 3), h=st.integers(2, 8), w=st.integers(2, 8), k=st.integers(1, 3),
       s=st.integers(1, 3), seed=st.integers(0, 2**16), ties=st.booleans())
def test_maxpool_matches_window_oracle(c, h, w, k, s, seed, ties):
    if k > min(h, w):
        return
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 3, (c, h, w)) if ties else rng.standard_normal((c, h, w))
    x = x.astype(np.float32)
    out, idx = T.maxpool2d(x, k, s)
    ref, ref_idx = naive_pool(x, k, s)
    assert np.array_equal(out, ref)
    assert np.array_equal(idx, ref_idx)
    assert out.max() <= x.max()
    assert np.array_equal(x.ravel()[idx], out)


def test_maxpool_backward_scatters_to_argmax():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((2, 1, 4, 4)).astype(np.float32)
    out, idx = T.maxpool2d(x, 2, 2)
    dout = rng.standard_normal(out.shape).astype(np.float32)
    dx = T.maxpool2d_backward(dout, idx, x.shape)
    expected = np.zeros(x.size, np.float32)
    np.add.at(expected, idx.ravel(), dout.ravel())
    assert np.array_equal(dx.ravel(), expected)


def test_maxpool_window_too_large():
    with pytest.raises(ShapeError):
        T.maxpool2d(np.ones((1, 2, 2), np.float32), 3, 1)
