"""Binary checkpoint format for layer stacks and Adam state.

Layout (all integers little-endian):

    magic  b"CDEE"
    u16    format version (1)
    u8     model kind: 1 = plain stack, 2 = autoencoder
    u32    encoder layer count (autoencoder only)
    u32    layer count
    per layer:
        u8  kind code
        kind-specific metadata (u32 fields), then raw float32 parameters
    u8     Adam flag (0/1); if 1: u64 t, 4x f64 hyperparameters,
           then per parameter tensor: m then v as raw float32
    u32    CRC-32 over everything above

Parameters are stored as raw float32, so load(save(m)) reproduces every
bit of a float32 model.
"""

import os
import struct
import zlib

import numpy as np

from .adam import AdamOptimizer
from .patch_filter import AutoencoderModel
from .tensor_ops import (Conv2dLayer, DenseLayer, Flatten, LayerStack,
                         MaxPoolLayer, Relu, Reshape, Sigmoid, Softmax,
                         Upsample)

MAGIC = b"CDEE"
VERSION = 1

KIND_CONV = 1
KIND_MAXPOOL = 2
KIND_DENSE = 3
KIND_RELU = 4
KIND_SIGMOID = 5
KIND_SOFTMAX = 6
KIND_FLATTEN = 7
KIND_UPSAMPLE = 8
KIND_RESHAPE = 9

MODEL_STACK = 1
MODEL_AUTOENCODER = 2


class CheckpointError(ValueError):
    pass


def _f32_bytes(arr: np.ndarray) -> bytes:
    if arr.dtype != np.float32:
        raise CheckpointError(
            f"checkpoints store float32 parameters, got {arr.dtype}"
        )
    return np.ascontiguousarray(arr).tobytes()


def _encode_layer(layer) -> bytes:
    if isinstance(layer, Conv2dLayer):
        head = struct.pack("<BIIII", KIND_CONV, layer.out_channels,
                           layer.in_channels, layer.kernel_size, layer.stride)
        return head + _f32_bytes(layer.kernels) + _f32_bytes(layer.bias)
    if isinstance(layer, MaxPoolLayer):
        return struct.pack("<BI", KIND_MAXPOOL, layer.window)
    if isinstance(layer, DenseLayer):
        head = struct.pack("<BII", KIND_DENSE, layer.in_features,
                           layer.out_features)
        return head + _f32_bytes(layer.weights) + _f32_bytes(layer.bias)
    if isinstance(layer, Relu):
        return struct.pack("<B", KIND_RELU)
    if isinstance(layer, Sigmoid):
        return struct.pack("<B", KIND_SIGMOID)
    if isinstance(layer, Softmax):
        return struct.pack("<B", KIND_SOFTMAX)
    if isinstance(layer, Flatten):
        return struct.pack("<B", KIND_FLATTEN)
    if isinstance(layer, Upsample):
        return struct.pack("<BI", KIND_UPSAMPLE, layer.factor)
    if isinstance(layer, Reshape):
        dims = tuple(layer.shape)
        return struct.pack("<BI", KIND_RESHAPE, len(dims)) + struct.pack(
            f"<{len(dims)}I", *dims)
    raise CheckpointError(f"cannot serialize layer type {type(layer).__name__}")


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise CheckpointError(f"truncated checkpoint at byte {self.pos}")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def take_f32(self, shape) -> np.ndarray:
        count = int(np.prod(shape))
        size = count * 4
        if self.pos + size > len(self.data):
            raise CheckpointError(f"truncated checkpoint at byte {self.pos}")
        arr = np.frombuffer(self.data, dtype="<f4", count=count,
                            offset=self.pos).reshape(shape).copy()
        self.pos += size
        return arr


def _decode_layer(reader: _Reader):
    (kind,) = reader.take("<B")
    if kind == KIND_CONV:
        out_c, in_c, k, stride = reader.take("<IIII")
        kernels = reader.take_f32((out_c, in_c, k, k))
        bias = reader.take_f32((out_c,))
        return Conv2dLayer(kernels=kernels, bias=bias, stride=stride)
    if kind == KIND_MAXPOOL:
        (window,) = reader.take("<I")
        return MaxPoolLayer(window=window)
    if kind == KIND_DENSE:
        in_f, out_f = reader.take("<II")
        weights = reader.take_f32((in_f, out_f))
        bias = reader.take_f32((out_f,))
        return DenseLayer(weights=weights, bias=bias)
    if kind == KIND_RELU:
        return Relu()
    if kind == KIND_SIGMOID:
        return Sigmoid()
    if kind == KIND_SOFTMAX:
        return Softmax()
    if kind == KIND_FLATTEN:
        return Flatten()
    if kind == KIND_UPSAMPLE:
        (factor,) = reader.take("<I")
        return Upsample(factor=factor)
    if kind == KIND_RESHAPE:
        (ndims,) = reader.take("<I")
        dims = reader.take(f"<{ndims}I")
        return Reshape(shape=tuple(dims))
    raise CheckpointError(f"unknown layer kind code {kind}")


def _encode(layers, encoder_len: int | None,
            optimizer: AdamOptimizer | None) -> bytes:
    parts = [MAGIC, struct.pack("<H", VERSION)]
    if encoder_len is None:
        parts.append(struct.pack("<B", MODEL_STACK))
    else:
        parts.append(struct.pack("<BI", MODEL_AUTOENCODER, encoder_len))
    parts.append(struct.pack("<I", len(layers)))
    for layer in layers:
        parts.append(_encode_layer(layer))
    if optimizer is None:
        parts.append(struct.pack("<B", 0))
    else:
        st = optimizer.states[0]
        parts.append(struct.pack("<BQdddd", 1, st.t, st.alpha, st.beta1,
                                 st.beta2, st.epsilon))
        for state in optimizer.states:
            parts.append(_f32_bytes(state.m.astype(np.float32, copy=False)))
            parts.append(_f32_bytes(state.v.astype(np.float32, copy=False)))
    payload = b"".join(parts)
    return payload + struct.pack("<I", zlib.crc32(payload))


def _decode(data: bytes):
    if len(data) < len(MAGIC) + 2 + 4:
        raise CheckpointError("checkpoint too short")
    payload, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(payload) != crc:
        raise CheckpointError("checkpoint CRC mismatch")
    reader = _Reader(payload)
    magic = payload[:4]
    reader.pos = 4
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    (version,) = reader.take("<H")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (model_kind,) = reader.take("<B")
    encoder_len = None
    if model_kind == MODEL_AUTOENCODER:
        (encoder_len,) = reader.take("<I")
    elif model_kind != MODEL_STACK:
        raise CheckpointError(f"unknown model kind {model_kind}")
    (n_layers,) = reader.take("<I")
    layers = [_decode_layer(reader) for _ in range(n_layers)]
    (adam_flag,) = reader.take("<B")
    adam = None
    if adam_flag:
        t, alpha, beta1, beta2, epsilon = reader.take("<Qdddd")
        moments = []
        for layer in layers:
            for param in layer.params():
                m = reader.take_f32(param.shape)
                v = reader.take_f32(param.shape)
                moments.append((m, v))
        adam = (t, alpha, beta1, beta2, epsilon, moments)
    if reader.pos != len(payload):
        raise CheckpointError(
            f"{len(payload) - reader.pos} trailing bytes after checkpoint payload"
        )
    return layers, encoder_len, adam


def _attach_optimizer(stack_params, adam) -> AdamOptimizer | None:
    if adam is None:
        return None
    t, alpha, beta1, beta2, epsilon, moments = adam
    optimizer = AdamOptimizer(stack_params, alpha=alpha, beta1=beta1,
                              beta2=beta2, epsilon=epsilon)
    for state, (m, v) in zip(optimizer.states, moments):
        state.m = m
        state.v = v
        state.t = int(t)
    return optimizer


def save_model(path, model: LayerStack,
               optimizer: AdamOptimizer | None = None) -> None:
    data = _encode(model.layers, None, optimizer)
    _atomic_write(path, data)


def load_model(path):
    """Returns (LayerStack, AdamOptimizer or None)."""
    with open(path, "rb") as f:
        data = f.read()
    layers, encoder_len, adam = _decode(data)
    if encoder_len is not None:
        raise CheckpointError("file holds an autoencoder, use load_autoencoder")
    stack = LayerStack(layers)
    return stack, _attach_optimizer(stack.params(), adam)


def save_autoencoder(path, model: AutoencoderModel,
                     optimizer: AdamOptimizer | None = None) -> None:
    layers = model.encoder.layers + model.decoder.layers
    data = _encode(layers, len(model.encoder.layers), optimizer)
    _atomic_write(path, data)


def load_autoencoder(path):
    """Returns (AutoencoderModel, AdamOptimizer or None)."""
    with open(path, "rb") as f:
        data = f.read()
    layers, encoder_len, adam = _decode(data)
    if encoder_len is None:
        raise CheckpointError("file holds a plain stack, use load_model")
    model = AutoencoderModel(encoder=LayerStack(layers[:encoder_len]),
                             decoder=LayerStack(layers[encoder_len:]))
    return model, _attach_optimizer(model.params(), adam)


def _atomic_write(path, data: bytes) -> None:
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)
