import io

import numpy as np
import pytest

from banet.tensor import (Tensor, add, avg_pool2d, backward, bce_loss,
                          bilinear_resize, concat_channels, conv2d,
                          conv_output_size, global_avg_pool, interp_matrix,
                          mul, read_tensor_raw, relu, scalar_rsub, scale,
                          sigmoid, sub, write_tensor_raw)


def t(data, **kw):
    return Tensor(np.asarray(data, dtype=np.float64), dtype=np.float64, **kw)


# ---------------------------------------------------------------------------
# naive oracles


def conv2d_loop(x, w, b, stride, padding, dilation):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    oh = conv_output_size(h, kh, stride, padding, dilation)
    ow = conv_output_size(wd, kw, stride, padding, dilation)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((n, cout, oh, ow))
    for ni in range(n):
        for co in range(cout):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ci in range(cin):
                        for ki in range(kh):
                            for kj in range(kw):
                                acc += (xp[ni, ci, i * stride + ki * dilation,
                                           j * stride + kj * dilation]
                                        * w[co, ci, ki, kj])
                    out[ni, co, i, j] = acc + (b[0, co, 0, 0] if b is not None else 0.0)
    return out


def avg_pool_loop(x, k, stride, padding):
    n, c, h, w = x.shape
    oh = conv_output_size(h, k, stride, padding, 1)
    ow = conv_output_size(w, k, stride, padding, 1)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((n, c, oh, ow))
    for ni in range(n):
        for ci in range(c):
            for i in range(oh):
                for j in range(ow):
                    win = xp[ni, ci, i * stride:i * stride + k, j * stride:j * stride + k]
                    out[ni, ci, i, j] = win.sum() / (k * k)
    return out


# ---------------------------------------------------------------------------
# conv2d


def test_conv_identity_one_by_one():
    rng = np.random.default_rng(0)
    x = t(rng.uniform(-1, 1, (1, 3, 8, 8)))
    w = np.zeros((3, 3, 1, 1))
    for i in range(3):
        w[i, i, 0, 0] = 1.0
    out = conv2d(x, t(w))
    assert np.array_equal(out.data, x.data)


def test_conv_all_ones_3x3():
    x = t(np.ones((1, 1, 3, 3)))
    w = t(np.ones((1, 1, 3, 3)))
    out = conv2d(x, w, padding=1).data[0, 0]
    assert out[1, 1] == 9.0
    assert out[0, 1] == 6.0 and out[1, 0] == 6.0
    assert out[0, 0] == 4.0 and out[2, 2] == 4.0


def test_conv_dilated_shape():
    x = t(np.zeros((1, 1, 5, 5)))
    w = t(np.zeros((1, 1, 3, 3)))
    out = conv2d(x, w, stride=1, padding=2, dilation=2)
    assert out.shape == (1, 1, 5, 5)


@pytest.mark.parametrize("k", [1, 3, 5, 7])
@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("dilation", [1, 2])
@pytest.mark.parametrize("padding", [0, 1, 2, 3])
def test_conv_shape_sweep(k, stride, dilation, padding):
    h, w = 16, 13
    oh = conv_output_size(h, k, stride, padding, dilation)
    ow = conv_output_size(w, k, stride, padding, dilation)
    if oh <= 0 or ow <= 0:
        pytest.skip("degenerate geometry")
    x = t(np.zeros((1, 2, h, w)))
    wt = t(np.zeros((3, 2, k, k)))
    out = conv2d(x, wt, stride=stride, padding=padding, dilation=dilation)
    assert out.shape == (1, 3, oh, ow)


def test_conv_matches_loop_oracle():
    rng = np.random.default_rng(1)
    for stride, padding, dilation in [(1, 0, 1), (1, 2, 2), (2, 1, 1), (2, 2, 2)]:
        x = rng.uniform(-1, 1, (2, 3, 7, 6))
        w = rng.uniform(-1, 1, (4, 3, 3, 3))
        b = rng.uniform(-1, 1, (1, 4, 1, 1))
        got = conv2d(t(x), t(w), t(b), stride, padding, dilation).data
        want = conv2d_loop(x, w, b, stride, padding, dilation)
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_conv_linearity():
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, (1, 2, 6, 6))
    y = rng.uniform(-1, 1, (1, 2, 6, 6))
    w = t(rng.uniform(-1, 1, (3, 2, 3, 3)))
    a, b = 1.7, -0.4
    lhs = conv2d(t(a * x + b * y), w, padding=1).data
    rhs = a * conv2d(t(x), w, padding=1).data + b * conv2d(t(y), w, padding=1).data
    np.testing.assert_allclose(lhs, rhs, rtol=1e-5)


def test_conv_errors():
    x = t(np.zeros((1, 2, 4, 4)))
    with pytest.raises(ValueError, match="channels"):
        conv2d(x, t(np.zeros((1, 3, 3, 3))))
    with pytest.raises(ValueError, match="odd"):
        conv2d(x, t(np.zeros((1, 2, 2, 2))))
    with pytest.raises(ValueError, match="non-positive"):
        conv2d(x, t(np.zeros((1, 2, 5, 5))))


# ---------------------------------------------------------------------------
# pooling


def test_avg_pool_constant_preserved():
    x = t(np.full((1, 2, 5, 5), 0.5))
    out = avg_pool2d(x, 3, stride=1, padding=0)
    assert np.array_equal(out.data, np.full((1, 2, 3, 3), 0.5))


def test_avg_pool_mean_example():
    x = t([[[[1.0, 2.0], [3.0, 4.0]]]])
    out = avg_pool2d(x, 2, stride=2, padding=0)
    assert out.data.reshape(()) == 2.5


def test_avg_pool_shape():
    out = avg_pool2d(t(np.zeros((1, 1, 4, 4))), 2, stride=2)
    assert out.shape == (1, 1, 2, 2)


def test_avg_pool_matches_loop_oracle():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, (2, 2, 6, 5))
    for k, stride, padding in [(1, 1, 0), (2, 2, 0), (3, 1, 1), (3, 2, 1)]:
        got = avg_pool2d(t(x), k, stride, padding).data
        np.testing.assert_allclose(got, avg_pool_loop(x, k, stride, padding),
                                   rtol=1e-12, atol=1e-12)


def test_global_avg_pool():
    x = t([[[[0.0, 2.0], [4.0, 6.0]]]])
    out = global_avg_pool(x)
    assert out.shape == (1, 1, 1, 1)
    assert out.item() == 3.0


def test_global_avg_pool_gradient_is_uniform():
    x = t(np.arange(12.0).reshape(1, 3, 2, 2), requires_grad=True)
    backward(global_avg_pool(x).sum())
    np.testing.assert_allclose(x.grad, np.full(x.shape, 0.25))


# ---------------------------------------------------------------------------
# resize


def test_resize_same_size_is_identity():
    rng = np.random.default_rng(4)
    x = t(rng.uniform(-1, 1, (2, 3, 5, 7)))
    out = bilinear_resize(x, 5, 7)
    assert np.array_equal(out.data, x.data)


def test_resize_constant_stays_constant():
    x = t(np.full((1, 1, 3, 3), 0.75))
    out = bilinear_resize(x, 8, 5)
    np.testing.assert_allclose(out.data, 0.75, rtol=1e-12)


def test_resize_width_2_to_4():
    x = t(np.array([0.0, 1.0]).reshape(1, 1, 1, 2))
    out = bilinear_resize(x, 1, 4)
    np.testing.assert_allclose(out.data.ravel(), [0.0, 0.25, 0.75, 1.0], atol=1e-12)


def test_interp_matrix_rows_sum_to_one():
    for n_in, n_out in [(3, 7), (7, 3), (1, 4), (5, 5)]:
        m = interp_matrix(n_in, n_out)
        np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-12)


# ---------------------------------------------------------------------------
# elementwise / concat


def test_sigmoid_at_zero():
    assert sigmoid(t(np.zeros((1, 1, 1, 1)))).item() == 0.5


def test_scalar_rsub():
    assert scalar_rsub(1.0, sigmoid(t(np.zeros((1, 1, 1, 1))))).item() == 0.5


def test_concat_preserves_values():
    a = t(np.arange(8.0).reshape(1, 2, 2, 2))
    b = t(np.arange(12.0).reshape(1, 3, 2, 2) + 100)
    out = concat_channels([a, b])
    assert out.shape == (1, 5, 2, 2)
    assert np.array_equal(out.data[:, :2], a.data)
    assert np.array_equal(out.data[:, 2:], b.data)


def test_elementwise_shape_mismatch():
    a = t(np.zeros((1, 2, 2, 2)))
    b = t(np.zeros((1, 3, 2, 2)))
    for op in (add, sub, mul):
        with pytest.raises(ValueError, match="shape mismatch"):
            op(a, b)


def test_concat_requires_same_spatial():
    with pytest.raises(ValueError):
        concat_channels([t(np.zeros((1, 1, 2, 2))), t(np.zeros((1, 1, 3, 2)))])


# ---------------------------------------------------------------------------
# bce


def test_bce_at_zero_logits():
    logits = t(np.zeros((1, 1, 4, 4)))
    target = t((np.arange(16).reshape(1, 1, 4, 4) % 2).astype(np.float64))
    assert abs(bce_loss(logits, target).item() - np.log(2.0)) < 1e-12


def test_bce_saturated():
    target = t((np.arange(16).reshape(1, 1, 4, 4) % 2).astype(np.float64))
    logits = t(np.where(target.data == 1, 20.0, -20.0))
    assert bce_loss(logits, target).item() < 1e-6


def test_bce_gradient_formula():
    rng = np.random.default_rng(5)
    z = rng.uniform(-3, 3, (1, 1, 4, 4))
    g = (rng.random((1, 1, 4, 4)) < 0.5).astype(np.float64)
    logits = t(z, requires_grad=True)
    backward(bce_loss(logits, t(g)))
    p = 1.0 / (1.0 + np.exp(-z))
    np.testing.assert_allclose(logits.grad, (p - g) / z.size, rtol=1e-12)


def test_bce_rejects_non_binary_target():
    with pytest.raises(ValueError, match="binary"):
        bce_loss(t(np.zeros((1, 1, 2, 2))), t(np.full((1, 1, 2, 2), 0.5)))


# ---------------------------------------------------------------------------
# backward machinery


def test_backward_sum_gives_ones():
    x = t(np.arange(8.0).reshape(1, 2, 2, 2), requires_grad=True)
    backward(x.sum())
    assert np.array_equal(x.grad, np.ones(x.shape))


def test_backward_quadratic():
    x = t(np.arange(8.0).reshape(1, 2, 2, 2), requires_grad=True)
    backward(mul(x, x).sum())
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_gradient_accumulates_across_consumers():
    xdata = np.arange(4.0).reshape(1, 1, 2, 2) + 1
    x = t(xdata, requires_grad=True)
    backward(add(relu(x), mul(x, x)).sum())
    combined = x.grad

    x1 = t(xdata, requires_grad=True)
    backward(relu(x1).sum())
    x2 = t(xdata, requires_grad=True)
    backward(mul(x2, x2).sum())
    np.testing.assert_allclose(combined, x1.grad + x2.grad)


def test_backward_errors():
    x = t(np.zeros((1, 1, 2, 2)), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        backward(relu(x))
    with pytest.raises(RuntimeError, match="detached"):
        backward(t(np.zeros((1, 1, 1, 1))))
    loss = x.sum()
    backward(loss)
    with pytest.raises(RuntimeError, match="already ran"):
        backward(loss)


def test_dtype_mismatch_rejected():
    a = Tensor(np.zeros((1, 1, 2, 2), dtype=np.float32))
    b = Tensor(np.zeros((1, 1, 2, 2), dtype=np.float64), dtype=np.float64)
    with pytest.raises(ValueError, match="dtype"):
        add(a, b)


def test_determinism_forward_backward():
    def run():
        rng = np.random.default_rng(11)
        x = Tensor(rng.uniform(-1, 1, (2, 3, 8, 8)).astype(np.float32), requires_grad=True)
        w = Tensor(rng.uniform(-1, 1, (4, 3, 3, 3)).astype(np.float32), requires_grad=True)
        out = relu(conv2d(x, w, padding=1, stride=2))
        resized = bilinear_resize(out, 8, 8)
        loss = mul(resized, resized).sum()
        backward(loss)
        return x.grad.copy(), w.grad.copy(), out.data.copy()

    a = run()
    b = run()
    for u, v in zip(a, b):
        assert np.array_equal(u, v)


def test_scale_op():
    x = t(np.ones((1, 1, 2, 2)), requires_grad=True)
    out = scale(x, 2.5)
    np.testing.assert_allclose(out.data, 2.5)
    backward(out.sum())
    np.testing.assert_allclose(x.grad, 2.5)


# ---------------------------------------------------------------------------
# raw tensor format


def test_tensor_raw_roundtrip():
    rng = np.random.default_rng(6)
    arr = rng.uniform(-1, 1, (2, 3, 4, 5)).astype(np.float32)
    buf = io.BytesIO()
    write_tensor_raw(buf, arr)
    raw = buf.getvalue()
    assert raw[:4] == b"BANT"
    assert raw[4:8] == (1).to_bytes(4, "little")
    assert raw[8:12] == (4).to_bytes(4, "little")
    buf.seek(0)
    back = read_tensor_raw(buf)
    assert np.array_equal(back, arr)


def test_tensor_raw_bad_magic():
    with pytest.raises(ValueError, match="magic"):
        read_tensor_raw(io.BytesIO(b"NOPE" + b"\x00" * 32))
