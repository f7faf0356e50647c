import numpy as np
import pytest

from hcrnet import layers as L
from hcrnet.errors import ShapeError
from hcrnet.tensor import Tensor, derive_rng


def conv_params(w, b):
    return L.LayerParams(kind="conv2d", weights=Tensor(w), bias=Tensor(b))


def dense_params(w, b):
    return L.LayerParams(kind="dense", weights=Tensor(w), bias=Tensor(b))


def bn_params(c, gamma=None, beta=None, mean=None, var=None):
    return L.LayerParams(
        kind="batchnorm",
        bn_gamma=Tensor(np.ones(c, np.float32) if gamma is None else gamma),
        bn_beta=Tensor(np.zeros(c, np.float32) if beta is None else beta),
        bn_moving_mean=Tensor(np.zeros(c, np.float32) if mean is None else mean),
        bn_moving_variance=Tensor(np.ones(c, np.float32) if var is None else var),
    )


def conv_oracle(x, w, b):
    # direct nested-loop definition: 3x3, stride 1, zero pad 1
    n, h, wd, cin = x.shape
    cout = w.shape[3]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    out = np.zeros((n, h, wd, cout), x.dtype)
    for img in range(n):
        for i in range(h):
            for j in range(wd):
                for ki in range(3):
                    for kj in range(3):
                        for c in range(cin):
                            out[img, i, j] += xp[img, i + ki, j + kj, c] * w[ki, kj, c]
    return out + b


# ---- convolution ----

def test_conv_delta_kernel_is_identity():
    rng = np.random.default_rng(0)
    x = rng.random((2, 5, 5, 3)).astype(np.float32)
    w = np.zeros((3, 3, 3, 3), np.float32)
    for c in range(3):
        w[1, 1, c, c] = 1.0  # center tap, channel passthrough
    y, _ = L.conv2d_forward(x, conv_params(w, np.zeros(3, np.float32)))
    assert np.allclose(y.data, x, atol=1e-6)


@pytest.mark.parametrize("shape,cout", [((1, 5, 5, 1), 1), ((2, 4, 4, 3), 2)])
def test_conv_forward_matches_nested_loop_oracle(shape, cout):
    rng = np.random.default_rng(1)
    x = rng.standard_normal(shape).astype(np.float32)
    w = rng.standard_normal((3, 3, shape[3], cout)).astype(np.float32)
    b = rng.standard_normal(cout).astype(np.float32)
    y, _ = L.conv2d_forward(x, conv_params(w, b))
    assert np.allclose(y.data, conv_oracle(x, w, b), atol=1e-5)


def test_conv_bias_gradient_is_plain_summation():
    rng = np.random.default_rng(2)
    x = rng.random((2, 4, 4, 2)).astype(np.float32)
    p = conv_params(rng.random((3, 3, 2, 3)).astype(np.float32), np.zeros(3, np.float32))
    _, cache = L.conv2d_forward(x, p)
    g = rng.random((2, 4, 4, 3)).astype(np.float32)
    _, _, gb = L.conv2d_backward(g, cache, p)
    assert np.allclose(gb.data, g.sum(axis=(0, 1, 2)), rtol=1e-5)


def test_conv_input_validation():
    p = conv_params(np.zeros((3, 3, 2, 1), np.float32), np.zeros(1, np.float32))
    with pytest.raises(ShapeError):
        L.conv2d_forward(np.zeros((4, 4, 2), np.float32), p)  # missing batch dim
    with pytest.raises(ShapeError):
        L.conv2d_forward(np.zeros((1, 4, 4, 3), np.float32), p)  # channel mismatch
    bad = L.LayerParams(kind="conv2d", weights=Tensor(np.zeros((5, 5, 2, 1), np.float32)),
                        bias=Tensor(np.zeros(1, np.float32)))
    with pytest.raises(ShapeError):
        L.conv2d_forward(np.zeros((1, 4, 4, 2), np.float32), bad)


def test_conv_backward_rejects_wrong_grad_shape():
    p = conv_params(np.ones((3, 3, 2, 3), np.float32), np.zeros(3, np.float32))
    _, cache = L.conv2d_forward(np.ones((1, 4, 4, 2), np.float32), p)
    with pytest.raises(ShapeError):
        L.conv2d_backward(np.ones((1, 4, 4, 2), np.float32), cache, p)


# ---- max pooling ----

def test_maxpool_matches_window_scan():
    rng = np.random.default_rng(3)
    x = rng.random((2, 6, 4, 3)).astype(np.float32)
    y, _ = L.maxpool_forward(x)
    assert y.shape == [2, 3, 2, 3]
    for n in range(2):
        for i in range(3):
            for j in range(2):
                for c in range(3):
                    window = x[n, 2 * i:2 * i + 2, 2 * j:2 * j + 2, c]
                    assert y.data[n, i, j, c] == window.max()


def test_maxpool_ties_go_to_the_first_window_slot():
    x = np.ones((1, 2, 2, 1), np.float32)
    _, cache = L.maxpool_forward(x)
    g = np.full((1, 1, 1, 1), 2.0, np.float32)
    gx = L.maxpool_backward(g, cache)
    expected = np.zeros((1, 2, 2, 1), np.float32)
    expected[0, 0, 0, 0] = 2.0  # top-left wins the tie
    assert np.array_equal(gx.data, expected)


def test_maxpool_backward_conserves_gradient_mass():
    rng = np.random.default_rng(4)
    # distinct values so each window has a unique argmax
    x = rng.permutation(2 * 8 * 8 * 3).reshape(2, 8, 8, 3).astype(np.float32)
    _, cache = L.maxpool_forward(x)
    g = rng.random((2, 4, 4, 3)).astype(np.float32)
    gx = L.maxpool_backward(g, cache)
    assert np.allclose(gx.data.sum(), g.sum(), rtol=1e-6)
    # gradient lands only where the max was
    assert (gx.data != 0).sum() == g.size


def test_maxpool_rejects_odd_spatial_dims():
    with pytest.raises(ShapeError):
        L.maxpool_forward(np.zeros((1, 5, 4, 1), np.float32))
    with pytest.raises(ShapeError):
        L.maxpool_forward(np.zeros((4, 4, 1), np.float32))


# ---- batch normalization ----

def test_batchnorm_infer_with_identity_stats_is_identity():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((4, 7)).astype(np.float32)
    y, cache = L.batchnorm_forward(x, bn_params(7), "infer")
    assert np.allclose(y.data, x, atol=1e-5)
    assert cache["mode"] == "infer"


def test_batchnorm_train_normalizes_batch_statistics():
    rng = np.random.default_rng(6)
    x = (rng.standard_normal((64, 5)) * 3.0 + 2.0).astype(np.float32)
    y, _ = L.batchnorm_forward(x, bn_params(5), "train")
    assert np.allclose(y.data.mean(axis=0), 0.0, atol=1e-5)
    assert np.allclose(y.data.var(axis=0), 1.0, atol=1e-3)


def test_batchnorm_normalizes_over_all_leading_axes():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2, 4, 4, 3)).astype(np.float32) * 2.0 + 1.0
    y, _ = L.batchnorm_forward(x, bn_params(3), "train")
    assert np.allclose(y.data.mean(axis=(0, 1, 2)), 0.0, atol=1e-5)
    assert np.allclose(y.data.var(axis=(0, 1, 2)), 1.0, atol=1e-3)


def test_batchnorm_moving_average_update():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((32, 4)).astype(np.float32) + 5.0
    p = bn_params(4)
    L.batchnorm_forward(x, p, "train")
    assert np.allclose(p.bn_moving_mean.data, 0.01 * x.mean(axis=0), rtol=1e-4)
    assert np.allclose(p.bn_moving_variance.data, 0.99 + 0.01 * x.var(axis=0), rtol=1e-4)


def test_batchnorm_infer_mutates_nothing():
    p = bn_params(3)
    before = p.bn_moving_mean.data.copy(), p.bn_moving_variance.data.copy()
    L.batchnorm_forward(np.ones((4, 3), np.float32), p, "infer")
    assert np.array_equal(p.bn_moving_mean.data, before[0])
    assert np.array_equal(p.bn_moving_variance.data, before[1])


def test_batchnorm_applies_gamma_and_beta():
    x = np.array([[1.0, 2.0], [3.0, 4.0]], np.float32)
    p = bn_params(2, gamma=np.array([2.0, 2.0], np.float32), beta=np.array([1.0, -1.0], np.float32))
    y, _ = L.batchnorm_forward(x, p, "infer")
    assert np.allclose(y.data, 2.0 * x + [1.0, -1.0], atol=1e-4)


def test_batchnorm_backward_requires_train_cache():
    p = bn_params(3)
    _, cache = L.batchnorm_forward(np.ones((4, 3), np.float32), p, "infer")
    with pytest.raises(ValueError):
        L.batchnorm_backward(np.ones((4, 3), np.float32), cache, p)


def test_batchnorm_channel_mismatch_and_bad_mode():
    p = bn_params(3)
    with pytest.raises(ShapeError):
        L.batchnorm_forward(np.ones((4, 5), np.float32), p, "train")
    with pytest.raises(ValueError):
        L.batchnorm_forward(np.ones((4, 3), np.float32), p, "test")


# ---- dense ----

def test_dense_identity_weights_pass_through():
    x = np.arange(8, dtype=np.float32).reshape(2, 4)
    p = dense_params(np.eye(4, dtype=np.float32), np.zeros(4, np.float32))
    y, _ = L.dense_forward(x, p)
    assert np.array_equal(y.data, x)


def test_dense_adds_bias():
    x = np.zeros((3, 2), np.float32)
    p = dense_params(np.zeros((2, 5), np.float32), np.arange(5, dtype=np.float32))
    y, _ = L.dense_forward(x, p)
    assert np.array_equal(y.data, np.tile(np.arange(5, dtype=np.float32), (3, 1)))


def test_dense_backward_oracle():
    rng = np.random.default_rng(9)
    x = rng.random((3, 4)).astype(np.float32)
    w = rng.random((4, 2)).astype(np.float32)
    p = dense_params(w, np.zeros(2, np.float32))
    _, cache = L.dense_forward(x, p)
    g = rng.random((3, 2)).astype(np.float32)
    gx, gw, gb = L.dense_backward(g, cache, p)
    assert np.allclose(gx.data, g @ w.T, rtol=1e-5)
    assert np.allclose(gw.data, x.T @ g, rtol=1e-5)
    assert np.allclose(gb.data, g.sum(axis=0), rtol=1e-5)


def test_dense_shape_validation():
    p = dense_params(np.zeros((4, 2), np.float32), np.zeros(2, np.float32))
    with pytest.raises(ShapeError):
        L.dense_forward(np.zeros((3, 5), np.float32), p)


# ---- flatten ----

def test_flatten_round_trip():
    x = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
    y, cache = L.flatten_forward(x)
    assert y.shape == [2, 12]
    gx = L.flatten_backward(y.data, cache)
    assert np.array_equal(gx.data, x)


# ---- dropout ----

def test_dropout_infer_and_zero_rate_are_identity():
    x = np.random.default_rng(10).random((4, 6)).astype(np.float32)
    for args in (("infer", 0.35), ("train", 0.0)):
        mode, rate = args
        y, cache = L.dropout_forward(x, rate, mode, derive_rng(0))
        assert np.array_equal(y.data, x)
        assert cache["mask"] is None


def test_dropout_train_statistics():
    x = np.ones((200, 500), np.float32)
    y, cache = L.dropout_forward(x, 0.35, "train", derive_rng(1))
    dropped = float((y.data == 0).mean())
    assert abs(dropped - 0.35) < 0.01
    kept = y.data[y.data != 0]
    assert np.allclose(kept, np.float32(1.0 / 0.65))
    # inverted scaling keeps the expectation near the input mean
    assert abs(y.data.mean() - 1.0) < 0.01


def test_dropout_same_seed_same_mask():
    x = np.ones((8, 8), np.float32)
    a, _ = L.dropout_forward(x, 0.5, "train", derive_rng(3))
    b, _ = L.dropout_forward(x, 0.5, "train", derive_rng(3))
    assert np.array_equal(a.data, b.data)


def test_dropout_backward_reuses_the_mask():
    x = np.ones((5, 5), np.float32)
    y, cache = L.dropout_forward(x, 0.4, "train", derive_rng(4))
    g = L.dropout_backward(np.ones((5, 5), np.float32), cache)
    assert np.array_equal(g.data, y.data)  # input was all ones


def test_dropout_rate_validation():
    x = np.ones(3, np.float32)
    with pytest.raises(ValueError):
        L.dropout_forward(x, 1.0, "train")
    with pytest.raises(ValueError):
        L.dropout_forward(x, -0.1, "train")
    with pytest.raises(ValueError):
        L.dropout_forward(x, 0.5, "eval")


def test_dropout_preserves_dtype():
    x64 = np.ones((4, 4), np.float64)
    y, _ = L.dropout_forward(x64, 0.5, "train", derive_rng(5))
    assert y.dtype == np.float64


# ---- relu ----

def test_relu_clamps_and_routes_gradient():
    x = np.array([[-2.0, 0.0, 3.0]], np.float32)
    y, cache = L.relu_forward(x)
    assert np.array_equal(y.data, [[0.0, 0.0, 3.0]])
    g = L.relu_backward(np.ones_like(x), cache)
    # the subgradient at exactly zero is zero
    assert np.array_equal(g.data, [[0.0, 0.0, 1.0]])
    assert np.array_equal(L.relu(x).data, y.data)


# ---- softmax ----

def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(11)
    y = L.softmax(rng.standard_normal((6, 9)).astype(np.float32))
    assert np.allclose(y.data.sum(axis=1), 1.0, atol=1e-6)
    assert y.data.min() >= 0.0


def test_softmax_survives_huge_logits():
    x = np.array([[1000.0, 0.0], [0.0, 1000.0], [-1000.0, -1000.0]], np.float32)
    y = L.softmax(x)
    assert np.isfinite(y.data).all()
    assert np.allclose(y.data.sum(axis=1), 1.0, atol=1e-6)
    assert y.data[0, 0] > 0.999 and y.data[1, 1] > 0.999


def test_softmax_matches_float64_oracle():
    rng = np.random.default_rng(12)
    x = (rng.standard_normal((5, 7)) * 50).astype(np.float32)
    x64 = x.astype(np.float64)
    ref = np.exp(x64 - x64.max(axis=1, keepdims=True))
    ref /= ref.sum(axis=1, keepdims=True)
    assert np.allclose(L.softmax(x).data, ref, atol=1e-6)


def test_softmax_requires_rank_two():
    with pytest.raises(ShapeError):
        L.softmax(np.zeros(5, np.float32))


# ---- dispatcher ----

def test_zero_gradient_stays_zero_through_every_backward():
    rng = np.random.default_rng(13)
    x_img = rng.random((2, 4, 4, 2)).astype(np.float32)
    cases = []
    p = conv_params(rng.random((3, 3, 2, 3)).astype(np.float32), np.zeros(3, np.float32))
    cases.append(("conv2d", p, *L.conv2d_forward(x_img, p)))
    cases.append(("maxpool2d", None, *L.maxpool_forward(x_img)))
    p = bn_params(2)
    cases.append(("batchnorm", p, *L.batchnorm_forward(x_img, p, "train")))
    cases.append(("flatten", None, *L.flatten_forward(x_img)))
    x2 = rng.random((3, 4)).astype(np.float32)
    p = dense_params(rng.random((4, 2)).astype(np.float32), np.zeros(2, np.float32))
    cases.append(("dense", p, *L.dense_forward(x2, p)))
    cases.append(("dropout", None, *L.dropout_forward(x2, 0.5, "train", derive_rng(0))))
    cases.append(("relu", None, *L.relu_forward(x2)))
    for kind, p, out, cache in cases:
        gin, pgrads = L.layer_backward(kind, np.zeros_like(out.data), cache, p)
        assert not gin.data.any(), kind
        for suffix, grad in pgrads.items():
            assert not grad.data.any(), f"{kind}.{suffix}"


def test_dispatcher_gradient_names_follow_the_suffix_convention():
    rng = np.random.default_rng(14)
    x = rng.random((2, 3)).astype(np.float32)
    p = dense_params(rng.random((3, 2)).astype(np.float32), np.zeros(2, np.float32))
    out, cache = L.dense_forward(x, p)
    _, grads = L.layer_backward("dense", np.ones_like(out.data), cache, p)
    assert sorted(grads) == ["bias", "weight"]
    p = bn_params(3)
    out, cache = L.batchnorm_forward(x, p, "train")
    _, grads = L.layer_backward("batchnorm", np.ones_like(out.data), cache, p)
    assert sorted(grads) == ["beta", "gamma"]


def test_dispatcher_rejects_softmax_and_unknown_kinds():
    with pytest.raises(ValueError):
        L.layer_backward("softmax", np.ones((1, 2)), None)
    with pytest.raises(ValueError):
        L.layer_backward("pooling", np.ones((1, 2)), None)


def test_layer_params_rejects_unknown_kind():
    with pytest.raises(ValueError):
        L.LayerParams(kind="avgpool")


def test_parameter_tensors_reports_updatability():
    p = bn_params(3)
    fields = {suffix: updatable for suffix, _, updatable in L.parameter_tensors(p)}
    assert fields == {"gamma": True, "beta": True, "moving_mean": False, "moving_variance": False}
    p.trainable = False
    fields = {suffix: updatable for suffix, _, updatable in L.parameter_tensors(p)}
    assert set(fields.values()) == {False}
