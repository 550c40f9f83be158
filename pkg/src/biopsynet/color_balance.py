"""Percentile-parameterized color balancing.

The balancing strength is a single "percentage" in [0, 50]: the fraction of
each channel histogram clipped at both tails. Tail quantiles feed per-channel
offsets and diagonal gains so that [q_lo, q_hi] stretches linearly onto the
full range; an optional 3x3 color matrix, exposure gain and gamma complete
the transform chain. Percentage 0 is the bit-exact identity.
"""

from dataclasses import dataclass, field

import numpy as np

IDENTITY_MATRIX = np.eye(3)


@dataclass
class ColorBalanceParams:
    """Per-image transform factors derived from the channel histograms.

    offsets are the normalized low quantiles subtracted before the diagonal
    gains; together a channel maps as (x - offset) * wb_gain * alpha.
    """

    percentage: float
    alpha: float = 1.0
    color_matrix: np.ndarray = field(default_factory=lambda: IDENTITY_MATRIX.copy())
    wb_gains: tuple = (1.0, 1.0, 1.0)
    offsets: tuple = (0.0, 0.0, 0.0)
    gamma: float = 1.0


def _check_image(image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {image.shape}")
    if image.dtype != np.uint8:
        raise ValueError(f"expected uint8 pixels, got {image.dtype}")
    if image.size == 0:
        raise ValueError("image is empty")


def tail_quantiles(channel: np.ndarray, percentage: float) -> tuple:
    """Nearest-rank quantiles at percentage% and (100-percentage)%.

    Computed on the 256-bin histogram; returns normalized values in [0, 1].
    """
    hist = np.bincount(channel.ravel(), minlength=256)
    cum = np.cumsum(hist)
    n = int(cum[-1])
    rank_lo = max(1, int(np.ceil(percentage / 100.0 * n)))
    rank_hi = max(1, int(np.ceil((100.0 - percentage) / 100.0 * n)))
    q_lo = int(np.searchsorted(cum, rank_lo))
    q_hi = int(np.searchsorted(cum, rank_hi))
    return q_lo / 255.0, q_hi / 255.0


def derive_params(image: np.ndarray, percentage: float,
                  color_matrix: np.ndarray | None = None,
                  gamma: float = 1.0) -> ColorBalanceParams:
    """Derive the stretch factors for one image.

    Percentage 0 returns identity params regardless of content. A channel
    whose tail quantiles coincide (e.g. at percentage 50 both hit the
    median) keeps gain 1 / offset 0.
    """
    _check_image(image)
    if not 0.0 <= percentage <= 50.0:
        raise ValueError(f"percentage must be in [0, 50], got {percentage}")
    matrix = IDENTITY_MATRIX.copy() if color_matrix is None else np.asarray(
        color_matrix, dtype=float)
    if matrix.shape != (3, 3):
        raise ValueError(f"color matrix must be 3x3, got {matrix.shape}")
    if percentage == 0.0:
        return ColorBalanceParams(percentage=0.0, color_matrix=matrix, gamma=gamma)

    gains = []
    offsets = []
    for c in range(3):
        q_lo, q_hi = tail_quantiles(image[:, :, c], percentage)
        if q_hi <= q_lo:
            gains.append(1.0)
            offsets.append(0.0)
        else:
            gains.append(1.0 / (q_hi - q_lo))
            offsets.append(q_lo)
    return ColorBalanceParams(
        percentage=percentage,
        alpha=1.0,
        color_matrix=matrix,
        wb_gains=tuple(gains),
        offsets=tuple(offsets),
        gamma=gamma,
    )


def apply_balance(image: np.ndarray, params: ColorBalanceParams) -> np.ndarray:
    """Apply the transform chain and requantize to 8 bits (round half up)."""
    _check_image(image)
    x = image.astype(np.float64) / 255.0
    x -= np.asarray(params.offsets)
    x *= np.asarray(params.wb_gains)
    matrix = np.asarray(params.color_matrix, dtype=float)
    if not np.array_equal(matrix, IDENTITY_MATRIX):
        x = x @ matrix.T
    x *= params.alpha
    np.clip(x, 0.0, 1.0, out=x)
    if params.gamma != 1.0:
        x = np.power(x, params.gamma)
    return np.floor(x * 255.0 + 0.5).astype(np.uint8)


def balance_sweep(image: np.ndarray, percentages) -> list:
    """One balanced copy per percentage, via derive_params + apply_balance."""
    percentages = list(percentages)
    if not percentages:
        raise ValueError("percentages list is empty")
    return [apply_balance(image, derive_params(image, p)) for p in percentages]


TRAIN_SWEEP = (0.001, 0.01, 0.1, 1.0)
TEST_SWEEP = (0.5, 1.0, 1.5, 2.0)
