"""Adam optimizer with bias-corrected first/second moment estimates."""

from dataclasses import dataclass

import numpy as np


@dataclass
class AdamState:
    """Per-parameter optimizer state.

    epsilon sits outside the square root: theta -= alpha * mhat / (sqrt(vhat) + eps).
    """

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    alpha: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_param(cls, param: np.ndarray, alpha: float = 0.001, beta1: float = 0.9,
                  beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        return cls(
            m=np.zeros_like(param),
            v=np.zeros_like(param),
            alpha=alpha,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState) -> np.ndarray:
    """One Adam update. Mutates ``state`` and updates ``param`` in place.

    Returns the updated parameter array (same object as ``param``).
    """
    if grad.shape != param.shape or state.m.shape != param.shape:
        raise ValueError(
            f"adam shape mismatch: param {param.shape}, grad {grad.shape}, "
            f"state {state.m.shape}"
        )
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grad
    state.v *= b2
    state.v += (1.0 - b2) * (grad * grad)
    mhat = state.m / (1.0 - b1 ** state.t)
    vhat = state.v / (1.0 - b2 ** state.t)
    param -= state.alpha * mhat / (np.sqrt(vhat) + state.epsilon)
    return param


class AdamOptimizer:
    """Adam over a list of parameter arrays (one shared step counter)."""

    def __init__(self, params, alpha: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = list(params)
        self.states = [
            AdamState.for_param(p, alpha=alpha, beta1=beta1, beta2=beta2,
                                epsilon=epsilon)
            for p in self.params
        ]

    def step(self, grads) -> None:
        if len(grads) != len(self.params):
            raise ValueError(
                f"expected {len(self.params)} gradients, got {len(grads)}"
            )
        for param, grad, state in zip(self.params, grads, self.states):
            adam_step(param, grad, state)
