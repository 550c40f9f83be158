"""Tissue/background patch filtering: autoencoder embedding + k-means (k=2).

Patches are area-averaged down to 64x64 for the autoencoder; the 64-dim
embeddings are clustered into two groups and the cluster whose members have
the higher mean pixel standard deviation is taken as the useful (tissue)
one, since tissue is textured and background is near-uniform.
"""

from dataclasses import dataclass

import numpy as np

from .adam import AdamOptimizer
from .tensor_ops import (Conv2dLayer, DenseLayer, Flatten, LayerStack, Relu,
                         Reshape, Sigmoid, Upsample, mse_loss)
from .classifier import he_uniform, glorot_uniform

AE_INPUT_SIDE = 64
EMBEDDING_DIM = 64
ENCODER_FILTERS = (16, 8)


@dataclass
class AutoencoderModel:
    encoder: LayerStack
    decoder: LayerStack
    embedding_dim: int = EMBEDDING_DIM

    def params(self):
        return self.encoder.params() + self.decoder.params()

    def forward(self, x):
        z, enc_caches = self.encoder.forward(x)
        out, dec_caches = self.decoder.forward(z)
        return out, (enc_caches, dec_caches)

    def backward(self, caches, grad_out):
        enc_caches, dec_caches = caches
        grad_z, dec_grads = self.decoder.backward(dec_caches, grad_out)
        _, enc_grads = self.encoder.backward(enc_caches, grad_z)
        return enc_grads + dec_grads


@dataclass
class KMeansModel:
    centroids: np.ndarray  # (2, embedding_dim)
    useful_cluster: int = -1  # unset until select_useful_cluster runs

    def assign(self, points: np.ndarray) -> np.ndarray:
        d = ((points[:, None, :] - self.centroids[None, :, :]) ** 2).sum(axis=2)
        return d.argmin(axis=1)


def downscale_area(image: np.ndarray, side: int) -> np.ndarray:
    """Area-average resample of an HWC image to side x side, float in [0,1].

    Exact fractional-area weighting, so any input size is supported and the
    result is deterministic.
    """
    arr = np.asarray(image)
    img = arr.astype(np.float64)
    if arr.dtype == np.uint8:
        img /= 255.0
    if img.shape[0] != side:
        img = _resample_axis(img, side, axis=0)
    if img.shape[1] != side:
        img = _resample_axis(img, side, axis=1)
    return img


def _resample_axis(img: np.ndarray, new_len: int, axis: int) -> np.ndarray:
    old_len = img.shape[axis]
    # weight matrix: each output cell averages its covering input interval
    weights = np.zeros((new_len, old_len))
    scale = old_len / new_len
    for i in range(new_len):
        lo = i * scale
        hi = (i + 1) * scale
        for j in range(int(np.floor(lo)), min(int(np.ceil(hi)), old_len)):
            overlap = min(hi, j + 1) - max(lo, j)
            if overlap > 0:
                weights[i, j] = overlap / scale
    out = np.tensordot(weights, img, axes=([1], [axis]))
    return out if axis == 0 else out.swapaxes(0, 1)


def build_autoencoder(seed: int, dtype=np.float32) -> AutoencoderModel:
    """Two stride-2 conv stages down to a 64-dim embedding, mirrored back up.

    Decoder upsampling is nearest-neighbour followed by a same conv; the
    sigmoid output keeps reconstructions in [0, 1]. decode(encode(x)) has
    exactly the input's 64x64x3 shape.
    """
    rng = np.random.default_rng(seed)
    side = AE_INPUT_SIDE // 4  # two stride-2 stages
    flat = side * side * ENCODER_FILTERS[1]

    def conv(in_c, out_c, stride=1):
        return Conv2dLayer(
            kernels=he_uniform(rng, (out_c, in_c, 3, 3), in_c * 9, dtype),
            bias=np.zeros(out_c, dtype=dtype),
            stride=stride,
        )

    encoder = LayerStack([
        conv(3, ENCODER_FILTERS[0], stride=2), Relu(),
        conv(ENCODER_FILTERS[0], ENCODER_FILTERS[1], stride=2), Relu(),
        Flatten(),
        DenseLayer(
            weights=glorot_uniform(rng, (flat, EMBEDDING_DIM), flat,
                                   EMBEDDING_DIM, dtype),
            bias=np.zeros(EMBEDDING_DIM, dtype=dtype)),
    ])
    decoder = LayerStack([
        DenseLayer(
            weights=glorot_uniform(rng, (EMBEDDING_DIM, flat), EMBEDDING_DIM,
                                   flat, dtype),
            bias=np.zeros(flat, dtype=dtype)),
        Relu(),
        Reshape((side, side, ENCODER_FILTERS[1])),
        Upsample(2),
        conv(ENCODER_FILTERS[1], ENCODER_FILTERS[0]), Relu(),
        Upsample(2),
        conv(ENCODER_FILTERS[0], 3),
        Sigmoid(),
    ])
    return AutoencoderModel(encoder=encoder, decoder=decoder)


def _ae_batch(patches) -> np.ndarray:
    return np.stack([downscale_area(p, AE_INPUT_SIDE) for p in patches]).astype(
        np.float32)


def train_autoencoder(patches, epochs: int, seed: int,
                      learning_rate: float = 0.001,
                      batch_size: int = 32) -> tuple:
    """Minimize mean squared reconstruction error with Adam.

    Returns (model, per-epoch loss list). Deterministic for a fixed seed.
    """
    if len(patches) < 2:
        raise ValueError(f"need at least 2 patches, got {len(patches)}")
    data = _ae_batch(patches)
    model = build_autoencoder(seed)
    optimizer = AdamOptimizer(model.params(), alpha=learning_rate)
    rng = np.random.default_rng(seed)
    n = len(data)
    losses = []
    for _ in range(epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            sel = order[start : start + batch_size]
            xb = data[sel]
            out, caches = model.forward(xb)
            loss, grad = mse_loss(out, xb)
            grads = model.backward(caches, grad)
            optimizer.step(grads)
            epoch_loss += loss * len(sel)
        losses.append(epoch_loss / n)
    return model, losses


def encode(model: AutoencoderModel, patches, batch_size: int = 64) -> np.ndarray:
    """Deterministic (batch, embedding_dim) embeddings."""
    chunks = []
    for start in range(0, len(patches), batch_size):
        xb = _ae_batch(patches[start : start + batch_size])
        z, _ = model.encoder.forward(xb)
        chunks.append(z)
    return np.concatenate(chunks, axis=0)


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded k-means++: distance-squared weighted spread of initial centroids."""
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    centroids[0] = points[rng.integers(n)]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[i] = points[rng.integers(n)]
        else:
            probs = d2 / total
            centroids[i] = points[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, ((points - centroids[i]) ** 2).sum(axis=1))
    return centroids


def _cluster_means(points: np.ndarray, labels: np.ndarray, k: int,
                   fallback: np.ndarray) -> np.ndarray:
    means = np.empty((k, points.shape[1]), dtype=np.float64)
    for c in range(k):
        members = points[labels == c]
        if len(members) == 0:
            means[c] = fallback[c]
            continue
        # canonical accumulation order: summing lexsorted rows keeps the
        # result independent of the input row order
        order = np.lexsort(members.T[::-1])
        means[c] = members[order].sum(axis=0) / len(members)
    return means


def lloyd_iterations(points: np.ndarray, centroids: np.ndarray,
                     tol: float = 1e-4, max_iter: int = 300) -> np.ndarray:
    """Lloyd updates until the max centroid shift drops below tol."""
    k = centroids.shape[0]
    centroids = centroids.copy()
    for _ in range(max_iter):
        d = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        labels = d.argmin(axis=1)
        new_centroids = _cluster_means(points, labels, k, centroids)
        shift = np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max()
        centroids = new_centroids
        if shift < tol:
            break
    return centroids


def kmeans_fit(embeddings: np.ndarray, k: int = 2, seed: int = 0) -> KMeansModel:
    points = np.asarray(embeddings, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError("embeddings must be (n, dim)")
    if len(points) < k:
        raise ValueError(f"need at least {k} points, got {len(points)}")
    rng = np.random.default_rng(seed)
    init = _kmeans_pp_init(points, k, rng)
    centroids = lloyd_iterations(points, init)
    return KMeansModel(centroids=centroids)


def patch_pixel_std(patch: np.ndarray) -> float:
    """Std of all pixel values of a patch, normalized to [0, 1]."""
    x = np.asarray(patch, dtype=np.float64)
    if patch.dtype == np.uint8:
        x = x / 255.0
    return float(x.std())


def select_useful_cluster(model: KMeansModel, patches, assignments) -> KMeansModel:
    """Mark as useful the cluster with the higher mean per-patch pixel std."""
    assignments = np.asarray(assignments)
    means = []
    for c in range(model.centroids.shape[0]):
        member_idx = np.flatnonzero(assignments == c)
        if len(member_idx) == 0:
            raise ValueError(f"cluster {c} is empty; cannot rank clusters")
        means.append(np.mean([patch_pixel_std(patches[i]) for i in member_idx]))
    model.useful_cluster = int(np.argmax(means))
    return model


def filter_patches(patches, ae_epochs: int, seed: int,
                   learning_rate: float = 0.001):
    """End-to-end filtering: train AE, embed, cluster, pick the useful side.

    Returns (assignments as 'useful'/'not_useful' strings, ae_model,
    kmeans_model, ae_loss_history).
    """
    ae_model, losses = train_autoencoder(patches, epochs=ae_epochs, seed=seed,
                                         learning_rate=learning_rate)
    embeddings = encode(ae_model, patches)
    km = kmeans_fit(embeddings, k=2, seed=seed)
    assignments = km.assign(embeddings)
    km = select_useful_cluster(km, patches, assignments)
    labels = ["useful" if a == km.useful_cluster else "not_useful"
              for a in assignments]
    return labels, ae_model, km, losses
