"""The fixed 3-conv-block CNN: assembly, training loop, prediction.

Architecture (patch 1000, pool chain 5/5/5):
conv 32@3x3 + ReLU -> pool 5 -> conv 32@3x3 + ReLU -> pool 5 ->
conv 64@3x3 + ReLU -> pool 5 -> flatten -> dense 128 + ReLU ->
dense 3 + softmax. Desk-scale runs use patch 64 with pool chain 4/2/2;
layer kinds and order are identical.
"""

from dataclasses import dataclass

import numpy as np

from .adam import AdamOptimizer
from .tensor_ops import (Conv2dLayer, DenseLayer, Flatten, LayerStack,
                         MaxPoolLayer, Relu, Softmax, softmax, sparse_ce_loss)

CONV_FILTERS = (32, 32, 64)
DENSE_UNITS = 128
DEFAULT_POOL_CHAIN = (5, 5, 5)
DESK_POOL_CHAIN = (4, 2, 2)


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 16
    epochs: int = 10
    seed: int = 0
    patch_size: int = 1000

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epsilon <= 0:
            raise ValueError("learning_rate and epsilon must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")


def he_uniform(rng: np.random.Generator, shape, fan_in: int,
               dtype=np.float32) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int,
                   dtype=np.float32) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def build_model(patch_size: int, channels: int = 3, classes: int = 3,
                seed: int = 0, pool_chain=None, dtype=np.float32) -> LayerStack:
    """Assemble the classifier with seeded He/Glorot-uniform weights.

    ReLU layers get He-uniform kernels, the output layer Glorot-uniform;
    biases start at zero. Raises if the pool chain does not divide the
    patch size, showing the shape chain up to the failure.
    """
    if pool_chain is None:
        pool_chain = DEFAULT_POOL_CHAIN
    pool_chain = tuple(int(p) for p in pool_chain)
    if len(pool_chain) != len(CONV_FILTERS):
        raise ValueError(f"pool chain must have {len(CONV_FILTERS)} entries")

    side = patch_size
    sides = [side]
    for window in pool_chain:
        if side % window:
            raise ValueError(
                f"patch size {patch_size} does not survive pool chain "
                f"{pool_chain}: shape chain {sides} then {side} % {window} != 0"
            )
        side //= window
        sides.append(side)

    rng = np.random.default_rng(seed)
    layers = []
    in_c = channels
    for filters, window in zip(CONV_FILTERS, pool_chain):
        fan_in = in_c * 3 * 3
        layers.append(Conv2dLayer(
            kernels=he_uniform(rng, (filters, in_c, 3, 3), fan_in, dtype),
            bias=np.zeros(filters, dtype=dtype),
        ))
        layers.append(Relu())
        layers.append(MaxPoolLayer(window=window))
        in_c = filters
    layers.append(Flatten())
    flat = sides[-1] * sides[-1] * CONV_FILTERS[-1]
    layers.append(DenseLayer(
        weights=he_uniform(rng, (flat, DENSE_UNITS), flat, dtype),
        bias=np.zeros(DENSE_UNITS, dtype=dtype),
    ))
    layers.append(Relu())
    layers.append(DenseLayer(
        weights=glorot_uniform(rng, (DENSE_UNITS, classes), DENSE_UNITS,
                               classes, dtype),
        bias=np.zeros(classes, dtype=dtype),
    ))
    layers.append(Softmax())
    return LayerStack(layers)


def model_summary(model: LayerStack, patch_size: int, channels: int = 3) -> list:
    """Architecture-table rows: (kind, output shape, trainable params).

    Conv+activation pairs collapse into one row, as architecture tables
    usually present them; computed from metadata only.
    """
    chain = model.shape_chain((patch_size, patch_size, channels))
    rows = []
    for layer, shape in zip(model.layers, chain):
        if isinstance(layer, Conv2dLayer):
            rows.append(("conv", shape, layer.param_count()))
        elif isinstance(layer, MaxPoolLayer):
            rows.append(("maxpool", shape, 0))
        elif isinstance(layer, Flatten):
            rows.append(("flatten", shape, 0))
        elif isinstance(layer, DenseLayer):
            rows.append(("dense", shape, layer.param_count()))
    return rows


def patches_to_batch(patches, dtype=np.float32) -> np.ndarray:
    """Stack uint8 HWC patches into a zero-centered NHWC float batch.

    Centering keeps the untrained network near the uniform-prediction
    baseline and speeds up early training.
    """
    batch = np.stack([np.asarray(p) for p in patches]).astype(dtype)
    batch /= 255.0
    batch -= 0.5
    return batch


@dataclass
class TrainHistory:
    loss: list
    accuracy: list


def train(model: LayerStack, patches, labels, config: TrainConfig,
          checkpoint_hook=None) -> TrainHistory:
    """Mini-batch training with Adam; deterministic for a fixed seed.

    patches: uint8 HWC arrays (already filtered and balance-expanded);
    labels: ints in {0, 1, 2}. Mutates the model parameters in place and
    returns per-epoch mean loss and training accuracy. checkpoint_hook,
    if given, is called with (epoch, model) after each epoch.
    """
    n = len(patches)
    if n == 0:
        raise ValueError("empty training dataset")
    if len(labels) != n:
        raise ValueError(f"{n} patches but {len(labels)} labels")
    data = patches_to_batch(patches)
    labels = np.asarray(labels, dtype=np.int64)

    optimizer = AdamOptimizer(
        model.params(), alpha=config.learning_rate, beta1=config.beta1,
        beta2=config.beta2, epsilon=config.epsilon)
    rng = np.random.default_rng(config.seed)
    history = TrainHistory(loss=[], accuracy=[])
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            sel = order[start : start + config.batch_size]
            xb, yb = data[sel], labels[sel]
            logits, caches = model.forward(xb, through_softmax=False)
            loss, grad_logits = sparse_ce_loss(logits, yb)
            _, param_grads = model.backward(caches, grad_logits)
            optimizer.step(param_grads)
            epoch_loss += loss * len(sel)
            correct += int((logits.argmax(axis=1) == yb).sum())
        history.loss.append(epoch_loss / n)
        history.accuracy.append(correct / n)
        if checkpoint_hook is not None:
            checkpoint_hook(epoch, model)
    return history


def predict(model: LayerStack, patches, batch_size: int = 32) -> np.ndarray:
    """Class-probability rows for a list of uint8 HWC patches."""
    if len(patches) == 0:
        return np.zeros((0, 3), dtype=np.float32)
    chunks = []
    for start in range(0, len(patches), batch_size):
        xb = patches_to_batch(patches[start : start + batch_size])
        logits, _ = model.forward(xb, through_softmax=False)
        chunks.append(softmax(logits))
    return np.concatenate(chunks, axis=0)
