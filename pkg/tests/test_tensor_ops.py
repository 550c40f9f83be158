import numpy as np
import pytest

from biopsynet.tensor_ops import (Conv2dLayer, DenseLayer, Flatten, LayerStack,
                                  MaxPoolLayer, Relu, Reshape, Softmax,
                                  Upsample, conv2d_backward, conv2d_forward,
                                  dense_backward, dense_forward, maxpool_backward,
                                  maxpool_forward, mse_loss, relu, relu_backward,
                                  sigmoid, sigmoid_backward, softmax,
                                  softmax_backward, sparse_ce_loss)

from oracles import finite_diff, loop_conv2d, rel_error

RNG = np.random.default_rng(1234)


def random_conv(out_c, in_c, k=3, stride=1, rng=RNG):
    return Conv2dLayer(
        kernels=rng.normal(size=(out_c, in_c, k, k)),
        bias=rng.normal(size=out_c),
        stride=stride,
    )


# ---------------------------------------------------------------------------
# convolution forward


def test_conv_identity_kernel():
    x = np.full((1, 1, 1, 1), 5.0)
    kernels = np.zeros((1, 1, 3, 3))
    kernels[0, 0, 1, 1] = 1.0
    layer = Conv2dLayer(kernels=kernels, bias=np.zeros(1))
    out = conv2d_forward(x, layer)
    assert out.shape == (1, 1, 1, 1)
    assert out[0, 0, 0, 0] == 5.0


def test_conv_table_output_shape():
    # 3-channel input, 32 filters of 3x3 preserve spatial dims
    layer = random_conv(32, 3)
    x = RNG.normal(size=(1, 20, 20, 3))
    assert conv2d_forward(x, layer).shape == (1, 20, 20, 32)


def test_conv_production_scale_shape():
    layer = Conv2dLayer(
        kernels=RNG.normal(size=(32, 3, 3, 3)).astype(np.float32),
        bias=np.zeros(32, dtype=np.float32))
    x = np.zeros((1, 1000, 1000, 3), dtype=np.float32)
    assert conv2d_forward(x, layer).shape == (1, 1000, 1000, 32)


def test_maxpool_production_scale_shapes():
    out, _ = maxpool_forward(np.zeros((1, 1000, 1000, 32), dtype=np.float32),
                             MaxPoolLayer(window=5))
    assert out.shape == (1, 200, 200, 32)
    out, _ = maxpool_forward(np.zeros((1, 40, 40, 64), dtype=np.float32),
                             MaxPoolLayer(window=5))
    assert out.shape == (1, 8, 8, 64)


def test_conv_matches_nested_loop_oracle():
    x = RNG.normal(size=(1, 5, 5, 2))
    layer = random_conv(3, 2)
    got = conv2d_forward(x, layer)
    want = loop_conv2d(x, layer.kernels, layer.bias)
    assert np.abs(got - want).max() < 1e-12


@pytest.mark.parametrize("shape,out_c,stride", [
    ((2, 4, 4, 3), 4, 1),
    ((1, 6, 6, 2), 2, 2),
    ((3, 2, 2, 1), 5, 1),
])
def test_conv_oracle_various_shapes(shape, out_c, stride):
    x = RNG.normal(size=shape)
    layer = random_conv(out_c, shape[3], stride=stride)
    got = conv2d_forward(x, layer)
    want = loop_conv2d(x, layer.kernels, layer.bias, stride=stride)
    assert np.abs(got - want).max() < 1e-12


def test_conv_channel_mismatch_error():
    layer = random_conv(4, 3)
    with pytest.raises(ValueError, match="expects 3 input channels, got 2"):
        conv2d_forward(RNG.normal(size=(1, 4, 4, 2)), layer)


def test_conv_finite_values():
    x = RNG.normal(size=(2, 6, 6, 3))
    out = conv2d_forward(x, random_conv(8, 3))
    assert np.all(np.isfinite(out))


# ---------------------------------------------------------------------------
# convolution backward


def test_conv_backward_zero_grad():
    x = RNG.normal(size=(1, 4, 4, 2))
    layer = random_conv(3, 2)
    gi, gk, gb = conv2d_backward(x, layer, np.zeros((1, 4, 4, 3)))
    assert not gi.any() and not gk.any() and not gb.any()


def test_conv_backward_bias_is_channel_sum():
    x = RNG.normal(size=(2, 4, 4, 2))
    layer = random_conv(3, 2)
    grad_out = RNG.normal(size=(2, 4, 4, 3))
    _, _, gb = conv2d_backward(x, layer, grad_out)
    assert np.allclose(gb, grad_out.sum(axis=(0, 1, 2)))


def _check_conv_grads(stride, shape, out_c):
    x = RNG.normal(size=shape)
    layer = random_conv(out_c, shape[3], stride=stride)
    grad_out = RNG.normal(size=conv2d_forward(x, layer).shape)

    def value():
        return float(np.sum(conv2d_forward(x, layer) * grad_out))

    gi, gk, gb = conv2d_backward(x, layer, grad_out)
    assert rel_error(gi, finite_diff(value, x)) < 1e-4
    assert rel_error(gk, finite_diff(value, layer.kernels)) < 1e-4
    assert rel_error(gb, finite_diff(value, layer.bias)) < 1e-4


def test_conv_backward_matches_finite_difference():
    _check_conv_grads(stride=1, shape=(1, 4, 4, 1), out_c=1)


def test_conv_backward_stride2_matches_finite_difference():
    _check_conv_grads(stride=2, shape=(1, 4, 4, 2), out_c=2)


def test_conv_backward_shape_mismatch():
    x = RNG.normal(size=(1, 4, 4, 2))
    layer = random_conv(3, 2)
    with pytest.raises(ValueError, match="grad_out shape"):
        conv2d_backward(x, layer, np.zeros((1, 3, 4, 3)))


# ---------------------------------------------------------------------------
# max pooling


def test_maxpool_shape_chain():
    x = RNG.normal(size=(1, 20, 20, 4)).astype(np.float32)
    out, _ = maxpool_forward(x, MaxPoolLayer(window=5))
    assert out.shape == (1, 4, 4, 4)


def test_maxpool_constant_input_first_cell_wins():
    x = np.ones((1, 4, 4, 2))
    out, argmax = maxpool_forward(x, MaxPoolLayer(window=2))
    assert np.all(out == 1.0)
    assert np.all(argmax.idx == 0)


def test_maxpool_divisibility_error():
    with pytest.raises(ValueError, match="divisible by 5"):
        maxpool_forward(RNG.normal(size=(1, 7, 10, 1)), MaxPoolLayer(window=5))


def test_maxpool_backward_routes_ones():
    x = RNG.permutation(np.arange(32.0)).reshape(1, 4, 4, 2)
    out, argmax = maxpool_forward(x, MaxPoolLayer(window=2))
    gi = maxpool_backward(argmax, np.ones_like(out))
    # one unit of gradient per window, landing on that window's max
    assert gi.sum() == out.size
    assert set(np.unique(gi)) == {0.0, 1.0}
    assert np.allclose(np.sort(x[gi == 1.0]), np.sort(out.ravel()))


def test_maxpool_backward_conserves_gradient_mass():
    x = RNG.normal(size=(2, 6, 6, 3))
    out, argmax = maxpool_forward(x, MaxPoolLayer(window=3))
    grad_out = RNG.normal(size=out.shape)
    gi = maxpool_backward(argmax, grad_out)
    assert np.isclose(gi.sum(), grad_out.sum())


def test_maxpool_backward_matches_finite_difference():
    # distinct entries keep max() differentiable at the sample point
    x = RNG.permutation(np.arange(72.0)).reshape(1, 6, 6, 2) / 72.0
    layer = MaxPoolLayer(window=2)
    grad_out = RNG.normal(size=(1, 3, 3, 2))

    def value():
        out, _ = maxpool_forward(x, layer)
        return float(np.sum(out * grad_out))

    _, argmax = maxpool_forward(x, layer)
    gi = maxpool_backward(argmax, grad_out)
    assert rel_error(gi, finite_diff(value, x)) < 1e-4


# ---------------------------------------------------------------------------
# dense


def test_dense_param_counts():
    layer = DenseLayer(weights=np.zeros((4096, 128)), bias=np.zeros(128))
    assert layer.param_count() == 524_416
    layer = DenseLayer(weights=np.zeros((128, 3)), bias=np.zeros(3))
    assert layer.param_count() == 387


def test_dense_forward_and_gradcheck():
    x = RNG.normal(size=(3, 5))
    layer = DenseLayer(weights=RNG.normal(size=(5, 4)), bias=RNG.normal(size=4))
    assert np.allclose(dense_forward(x, layer), x @ layer.weights + layer.bias)
    grad_out = RNG.normal(size=(3, 4))

    def value():
        return float(np.sum(dense_forward(x, layer) * grad_out))

    gi, gw, gb = dense_backward(x, layer, grad_out)
    assert rel_error(gi, finite_diff(value, x)) < 1e-4
    assert rel_error(gw, finite_diff(value, layer.weights)) < 1e-4
    assert rel_error(gb, finite_diff(value, layer.bias)) < 1e-4


def test_dense_feature_mismatch():
    layer = DenseLayer(weights=np.zeros((5, 4)), bias=np.zeros(4))
    with pytest.raises(ValueError, match="expects 5"):
        dense_forward(np.zeros((2, 7)), layer)


# ---------------------------------------------------------------------------
# activations and losses


def test_activation_point_values():
    assert relu(np.array([-1.0]))[0] == 0.0
    assert relu(np.array([2.0]))[0] == 2.0
    assert sigmoid(np.array([0.0]))[0] == 0.5
    assert np.allclose(softmax(np.zeros((1, 3))), [[1 / 3, 1 / 3, 1 / 3]])


def test_sigmoid_extremes_stay_finite():
    out = sigmoid(np.array([-1000.0, 1000.0]))
    assert np.all(np.isfinite(out))
    assert 0.0 <= out[0] < 1e-12 and 1.0 - 1e-12 < out[1] <= 1.0


def test_softmax_rows_are_distributions():
    z = RNG.normal(size=(10, 5)) * 5
    p = softmax(z)
    assert np.abs(p.sum(axis=1) - 1.0).max() < 1e-12
    assert np.all(p > 0) and np.all(p < 1)


def test_softmax_saturated_logits_stay_valid():
    p = softmax(np.array([[-1000.0, 0.0, 1000.0]]))
    assert np.all(np.isfinite(p))
    assert np.abs(p.sum(axis=1) - 1.0).max() < 1e-12
    assert np.all(p >= 0) and np.all(p <= 1)


def test_activation_gradchecks():
    x = RNG.normal(size=(4, 6))
    grad_out = RNG.normal(size=(4, 6))

    def relu_value():
        return float(np.sum(relu(x) * grad_out))

    # keep values away from the relu kink
    x[np.abs(x) < 0.05] += 0.1
    assert rel_error(relu_backward(x, grad_out), finite_diff(relu_value, x)) < 1e-4

    def sigmoid_value():
        return float(np.sum(sigmoid(x) * grad_out))

    assert rel_error(sigmoid_backward(sigmoid(x), grad_out),
                     finite_diff(sigmoid_value, x)) < 1e-4

    def softmax_value():
        return float(np.sum(softmax(x) * grad_out))

    assert rel_error(softmax_backward(softmax(x), grad_out),
                     finite_diff(softmax_value, x)) < 1e-4


def test_sparse_ce_uniform_logits():
    loss, _ = sparse_ce_loss(np.zeros((4, 3)), [0, 1, 2, 0])
    assert abs(loss - np.log(3.0)) < 1e-12


def test_sparse_ce_grad_rows_sum_to_zero():
    logits = RNG.normal(size=(6, 3))
    _, grad = sparse_ce_loss(logits, RNG.integers(0, 3, size=6))
    assert np.abs(grad.sum(axis=1)).max() < 1e-12


def test_sparse_ce_matches_finite_difference():
    logits = RNG.normal(size=(5, 4))
    labels = RNG.integers(0, 4, size=5)

    def value():
        return sparse_ce_loss(logits, labels)[0]

    _, grad = sparse_ce_loss(logits, labels)
    assert rel_error(grad, finite_diff(value, logits)) < 1e-4


def test_sparse_ce_label_out_of_range():
    with pytest.raises(ValueError, match="labels must lie in"):
        sparse_ce_loss(np.zeros((2, 3)), [0, 3])


def test_mse_loss_gradcheck():
    pred = RNG.normal(size=(3, 4))
    target = RNG.normal(size=(3, 4))

    def value():
        return mse_loss(pred, target)[0]

    _, grad = mse_loss(pred, target)
    assert rel_error(grad, finite_diff(value, pred)) < 1e-4


# ---------------------------------------------------------------------------
# structural nodes and the stack


def test_upsample_gradcheck():
    x = RNG.normal(size=(1, 3, 3, 2))
    node = Upsample(2)
    out, cache = node.forward(x)
    assert out.shape == (1, 6, 6, 2)
    grad_out = RNG.normal(size=out.shape)

    def value():
        return float(np.sum(node.forward(x)[0] * grad_out))

    gi, _ = node.backward(cache, grad_out)
    assert rel_error(gi, finite_diff(value, x)) < 1e-4


def test_stack_forward_backward_roundtrip_shapes():
    stack = LayerStack([
        Conv2dLayer(kernels=RNG.normal(size=(4, 3, 3, 3)), bias=np.zeros(4)),
        Relu(),
        MaxPoolLayer(window=2),
        Flatten(),
        DenseLayer(weights=RNG.normal(size=(16, 3)), bias=np.zeros(3)),
        Softmax(),
    ])
    x = RNG.normal(size=(2, 4, 4, 3))
    probs, caches = stack.forward(x)
    assert probs.shape == (2, 3)
    assert np.allclose(probs.sum(axis=1), 1.0)
    logits, caches = stack.forward(x, through_softmax=False)
    loss, grad = sparse_ce_loss(logits, [0, 1])
    grad_in, param_grads = stack.backward(caches, grad)
    assert grad_in.shape == x.shape
    assert len(param_grads) == len(stack.params())
    for p, g in zip(stack.params(), param_grads):
        assert p.shape == g.shape


def test_shape_chain_static():
    stack = LayerStack([
        Conv2dLayer(kernels=np.zeros((32, 3, 3, 3)), bias=np.zeros(32)),
        MaxPoolLayer(window=5),
        Flatten(),
        DenseLayer(weights=np.zeros((128 * 128 * 32 // 1, 8)), bias=np.zeros(8)),
    ])
    # metadata-only: no allocation at (640, 640) scale happens here
    chain = stack.shape_chain((640, 640, 3))
    assert chain[0] == (640, 640, 32)
    assert chain[1] == (128, 128, 32)
    assert chain[2] == (128 * 128 * 32,)
    assert chain[3] == (8,)


def test_reshape_node():
    node = Reshape((2, 2, 3))
    x = RNG.normal(size=(4, 12))
    out, cache = node.forward(x)
    assert out.shape == (4, 2, 2, 3)
    back, _ = node.backward(cache, out)
    assert np.array_equal(back, x)
