"""Differentiable layer kernels over plain numpy arrays.

Tensors are numpy ndarrays in row-major (C) order. Image batches are NHWC.
Every kernel is a pure function: forward ops take (input, layer) and return
new arrays, backward ops take the forward inputs/caches plus the upstream
gradient and return exact gradients. Nothing here mutates its arguments, so
the kernels are safe to call from multiple threads.

Training runs in float32; gradient-check tests build float64 layers. The
kernels preserve whatever dtype they are given.
"""

from dataclasses import dataclass

import numpy as np


# ---------------------------------------------------------------------------
# parameterized layers


@dataclass
class Conv2dLayer:
    """2D convolution, same-zero padding, square odd kernel.

    kernels: (out_channels, in_channels, k, k); bias: (out_channels,).
    The classifier only ever uses stride 1; the autoencoder encoder uses
    stride 2 to halve spatial dims (even input dims required for that).
    """

    kernels: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: str = "same-zero"

    def __post_init__(self):
        if self.padding != "same-zero":
            raise ValueError(f"unsupported padding mode: {self.padding!r}")
        if self.kernels.ndim != 4:
            raise ValueError("kernels must be (out_channels, in_channels, k, k)")
        if self.kernels.shape[2] != self.kernels.shape[3]:
            raise ValueError("only square kernels are supported")
        if self.kernels.shape[2] % 2 != 1:
            raise ValueError("same-zero padding requires an odd kernel size")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    @property
    def out_channels(self) -> int:
        return self.kernels.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernels.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.kernels.shape[2]

    def param_count(self) -> int:
        return self.kernels.size + self.bias.size

    def params(self):
        return [self.kernels, self.bias]

    def forward(self, x):
        return conv2d_forward(x, self), x

    def backward(self, cache, grad_out):
        grad_in, grad_k, grad_b = conv2d_backward(cache, self, grad_out)
        return grad_in, [grad_k, grad_b]


@dataclass
class MaxPoolLayer:
    """Non-overlapping max pooling: stride equals the window."""

    window: int

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("pool window must be >= 1")

    @property
    def stride(self) -> int:
        return self.window

    def param_count(self) -> int:
        return 0

    def params(self):
        return []

    def forward(self, x):
        out, argmax = maxpool_forward(x, self)
        return out, argmax

    def backward(self, cache, grad_out):
        return maxpool_backward(cache, grad_out), []


@dataclass
class DenseLayer:
    """Fully connected layer: weights (in_features, out_features)."""

    weights: np.ndarray
    bias: np.ndarray

    @property
    def in_features(self) -> int:
        return self.weights.shape[0]

    @property
    def out_features(self) -> int:
        return self.weights.shape[1]

    def param_count(self) -> int:
        return self.weights.size + self.bias.size

    def params(self):
        return [self.weights, self.bias]

    def forward(self, x):
        return dense_forward(x, self), x

    def backward(self, cache, grad_out):
        grad_in, grad_w, grad_b = dense_backward(cache, self, grad_out)
        return grad_in, [grad_w, grad_b]


# ---------------------------------------------------------------------------
# parameter-free stack nodes


class Relu:
    def param_count(self):
        return 0

    def params(self):
        return []

    def forward(self, x):
        return relu(x), x

    def backward(self, cache, grad_out):
        return relu_backward(cache, grad_out), []


class Sigmoid:
    def param_count(self):
        return 0

    def params(self):
        return []

    def forward(self, x):
        out = sigmoid(x)
        return out, out

    def backward(self, cache, grad_out):
        return sigmoid_backward(cache, grad_out), []


class Softmax:
    """Row-wise softmax over the last axis of a (batch, classes) input."""

    def param_count(self):
        return 0

    def params(self):
        return []

    def forward(self, x):
        out = softmax(x)
        return out, out

    def backward(self, cache, grad_out):
        return softmax_backward(cache, grad_out), []


class Flatten:
    def param_count(self):
        return 0

    def params(self):
        return []

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache, grad_out):
        return grad_out.reshape(cache), []


@dataclass
class Reshape:
    """Reshape each batch row to a fixed per-sample shape (decoder side)."""

    shape: tuple

    def param_count(self):
        return 0

    def params(self):
        return []

    def forward(self, x):
        return x.reshape((x.shape[0],) + tuple(self.shape)), x.shape

    def backward(self, cache, grad_out):
        return grad_out.reshape(cache), []


@dataclass
class Upsample:
    """Nearest-neighbour spatial upsampling by an integer factor (NHWC)."""

    factor: int

    def param_count(self):
        return 0

    def params(self):
        return []

    def forward(self, x):
        f = self.factor
        out = np.repeat(np.repeat(x, f, axis=1), f, axis=2)
        return out, x.shape

    def backward(self, cache, grad_out):
        n, h, w, c = cache
        f = self.factor
        # adjoint of repeat: sum each f x f block
        g = grad_out.reshape(n, h, f, w, f, c)
        return g.sum(axis=(2, 4)), []


# ---------------------------------------------------------------------------
# convolution


def _pad_same(x: np.ndarray, k: int) -> np.ndarray:
    p = (k - 1) // 2
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))


def _im2col(x_pad: np.ndarray, k: int, stride: int):
    """Rearrange padded NHWC input into (N, OH, OW, C*k*k) patch rows.

    The last axis flattens (channel, ky, kx) in row-major order, matching a
    row-major flatten of (in_channels, k, k) kernels.
    """
    win = np.lib.stride_tricks.sliding_window_view(x_pad, (k, k), axis=(1, 2))
    win = win[:, ::stride, ::stride]
    n, oh, ow = win.shape[:3]
    return win.reshape(n, oh, ow, -1), oh, ow


def conv2d_forward(x: np.ndarray, layer: Conv2dLayer) -> np.ndarray:
    """Cross-correlate an NHWC batch with the layer kernels and add bias.

    Same-zero padding: stride 1 preserves spatial dims; stride s divides them
    by s (even dims required). No activation is applied here.
    """
    if x.ndim != 4:
        raise ValueError(f"conv2d expects NHWC input, got ndim={x.ndim}")
    if x.shape[3] != layer.in_channels:
        raise ValueError(
            f"conv2d channel mismatch: layer expects {layer.in_channels} "
            f"input channels, got {x.shape[3]}"
        )
    if x.shape[1] < 1 or x.shape[2] < 1:
        raise ValueError("conv2d requires spatial dims >= 1")
    s = layer.stride
    if s > 1 and (x.shape[1] % s or x.shape[2] % s):
        raise ValueError(
            f"conv2d stride {s} requires spatial dims divisible by {s}, "
            f"got {x.shape[1]}x{x.shape[2]}"
        )
    k = layer.kernel_size
    cols, oh, ow = _im2col(_pad_same(x, k), k, s)
    kflat = layer.kernels.reshape(layer.out_channels, -1)
    out = cols @ kflat.T
    out += layer.bias
    return out.reshape(x.shape[0], oh, ow, layer.out_channels)


def conv2d_backward(x: np.ndarray, layer: Conv2dLayer, grad_out: np.ndarray):
    """Exact gradients of sum(grad_out * conv2d_forward(x, layer)).

    Returns (grad_input, grad_kernels, grad_bias).
    """
    n, h, w, c = x.shape
    k = layer.kernel_size
    s = layer.stride
    oc = layer.out_channels
    expected = conv2d_output_shape(x.shape, layer)
    if grad_out.shape != expected:
        raise ValueError(
            f"conv2d grad_out shape {grad_out.shape} does not match forward "
            f"output shape {expected}"
        )
    x_pad = _pad_same(x, k)
    cols, oh, ow = _im2col(x_pad, k, s)

    g2 = grad_out.reshape(-1, oc)
    grad_bias = g2.sum(axis=0)
    grad_kernels = (g2.T @ cols.reshape(-1, c * k * k)).reshape(layer.kernels.shape)

    dcols = (g2 @ layer.kernels.reshape(oc, -1)).reshape(n, oh, ow, c, k, k)
    grad_pad = np.zeros_like(x_pad)
    for u in range(k):
        for v in range(k):
            grad_pad[:, u : u + s * oh : s, v : v + s * ow : s, :] += dcols[
                :, :, :, :, u, v
            ]
    p = (k - 1) // 2
    grad_in = grad_pad[:, p : p + h, p : p + w, :] if p else grad_pad
    return grad_in, grad_kernels, grad_bias


def conv2d_output_shape(input_shape: tuple, layer: Conv2dLayer) -> tuple:
    n, h, w, _ = input_shape
    s = layer.stride
    return (n, h // s, w // s, layer.out_channels)


# ---------------------------------------------------------------------------
# pooling


@dataclass
class PoolArgmax:
    """Winning within-window flat positions from a maxpool forward pass."""

    idx: np.ndarray  # (N, OH, OW, C) int, flat index into the w*w window
    window: int
    input_shape: tuple


def maxpool_forward(x: np.ndarray, layer: MaxPoolLayer):
    """Non-overlapping max over window x window blocks; first cell wins ties.

    Returns (output, PoolArgmax). The argmax index is the flat row-major
    position of the winner inside its window.
    """
    n, h, w, c = x.shape
    win = layer.window
    if h % win or w % win:
        raise ValueError(
            f"maxpool window {win} requires spatial dims divisible by {win}, "
            f"got {h}x{w}"
        )
    oh, ow = h // win, w // win
    blocks = (
        x.reshape(n, oh, win, ow, win, c)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(n, oh, ow, win * win, c)
    )
    idx = blocks.argmax(axis=3)  # argmax takes the first occurrence on ties
    out = np.take_along_axis(blocks, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    return out, PoolArgmax(idx=idx, window=win, input_shape=x.shape)


def maxpool_backward(argmax: PoolArgmax, grad_out: np.ndarray) -> np.ndarray:
    """Route each output gradient to its argmax position; zeros elsewhere."""
    n, h, w, c = argmax.input_shape
    win = argmax.window
    oh, ow = h // win, w // win
    if grad_out.shape != (n, oh, ow, c):
        raise ValueError(
            f"maxpool grad_out shape {grad_out.shape} does not match "
            f"output shape {(n, oh, ow, c)}"
        )
    buf = np.zeros((n, oh, ow, win * win, c), dtype=grad_out.dtype)
    np.put_along_axis(buf, argmax.idx[:, :, :, None, :], grad_out[:, :, :, None, :], axis=3)
    return (
        buf.reshape(n, oh, ow, win, win, c)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(n, h, w, c)
    )


# ---------------------------------------------------------------------------
# dense


def dense_forward(x: np.ndarray, layer: DenseLayer) -> np.ndarray:
    if x.ndim != 2:
        raise ValueError(f"dense expects (batch, features) input, got ndim={x.ndim}")
    if x.shape[1] != layer.in_features:
        raise ValueError(
            f"dense feature mismatch: layer expects {layer.in_features}, "
            f"got {x.shape[1]}"
        )
    return x @ layer.weights + layer.bias


def dense_backward(x: np.ndarray, layer: DenseLayer, grad_out: np.ndarray):
    if grad_out.shape != (x.shape[0], layer.out_features):
        raise ValueError(
            f"dense grad_out shape {grad_out.shape} does not match "
            f"{(x.shape[0], layer.out_features)}"
        )
    grad_in = grad_out @ layer.weights.T
    grad_w = x.T @ grad_out
    grad_b = grad_out.sum(axis=0)
    return grad_in, grad_w, grad_b


# ---------------------------------------------------------------------------
# activations


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return grad_out * (x > 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split on sign so neither exp overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(output: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return grad_out * output * (1.0 - output)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for stability."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(probs: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    inner = (grad_out * probs).sum(axis=-1, keepdims=True)
    return probs * (grad_out - inner)


# ---------------------------------------------------------------------------
# losses


def sparse_ce_loss(logits: np.ndarray, labels) -> tuple:
    """Mean negative log softmax probability of the true class.

    Returns (loss, grad_logits) with grad_logits = (softmax - onehot) / batch.
    """
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ValueError("logits must be (batch, classes)")
    batch, classes = logits.shape
    if labels.shape != (batch,):
        raise ValueError(f"labels must have shape ({batch},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= classes:
        raise ValueError(
            f"labels must lie in [0, {classes}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(lse - z[np.arange(batch), labels]))
    grad = softmax(logits)
    grad[np.arange(batch), labels] -= 1.0
    grad /= batch
    return loss, grad.astype(logits.dtype, copy=False)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple:
    """Mean squared error over all elements; returns (loss, grad_pred)."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    grad = (2.0 / diff.size) * diff
    return loss, grad.astype(pred.dtype, copy=False)


# ---------------------------------------------------------------------------
# sequential container


class LayerStack:
    """Ordered sequence of layer nodes with explicit cache threading.

    ``forward`` returns (output, caches); ``backward`` consumes exactly the
    caches it was given, so a forward run with ``through_softmax=False``
    pairs with a backward fed the loss gradient at the logits.
    """

    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x: np.ndarray, through_softmax: bool = True):
        layers = self.layers
        if not through_softmax and layers and isinstance(layers[-1], Softmax):
            layers = layers[:-1]
        caches = []
        for layer in layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def backward(self, caches, grad_out: np.ndarray):
        """Returns (grad_input, param_grads) aligned with self.params()."""
        grads_rev = []
        for layer, cache in zip(reversed(self.layers[: len(caches)]), reversed(caches)):
            grad_out, pgrads = layer.backward(cache, grad_out)
            grads_rev.append(pgrads)
        param_grads = []
        for pgrads in reversed(grads_rev):
            param_grads.extend(pgrads)
        return grad_out, param_grads

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def param_count(self) -> int:
        return sum(layer.param_count() for layer in self.layers)

    def layer_param_counts(self):
        return [layer.param_count() for layer in self.layers]

    def shape_chain(self, input_shape: tuple):
        """Per-layer output shapes (no batch dim), computed from metadata only."""
        shape = tuple(input_shape)
        chain = []
        for layer in self.layers:
            if isinstance(layer, Conv2dLayer):
                h, w, c = shape
                if c != layer.in_channels:
                    raise ValueError(
                        f"shape chain broken at conv: expected {layer.in_channels} "
                        f"channels, have {c}"
                    )
                shape = (h // layer.stride, w // layer.stride, layer.out_channels)
            elif isinstance(layer, MaxPoolLayer):
                h, w, c = shape
                if h % layer.window or w % layer.window:
                    raise ValueError(
                        f"shape chain broken at maxpool: {h}x{w} not divisible "
                        f"by window {layer.window}"
                    )
                shape = (h // layer.window, w // layer.window, c)
            elif isinstance(layer, Flatten):
                shape = (int(np.prod(shape)),)
            elif isinstance(layer, DenseLayer):
                if shape != (layer.in_features,):
                    raise ValueError(
                        f"shape chain broken at dense: expected ({layer.in_features},), "
                        f"have {shape}"
                    )
                shape = (layer.out_features,)
            elif isinstance(layer, Reshape):
                shape = tuple(layer.shape)
            elif isinstance(layer, Upsample):
                h, w, c = shape
                shape = (h * layer.factor, w * layer.factor, c)
            # activations leave the shape unchanged
            chain.append(shape)
        return chain
