"""Adam optimizer step with bias correction."""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError


@dataclass
class AdamState:
    """Per-parameter first/second moment estimates and the step counter."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.m.shape != self.v.shape:
            raise DimensionError(
                f"moment arrays disagree: m {self.m.shape} vs v {self.v.shape}"
            )
        if self.step < 0:
            raise DimensionError(f"step counter must be >= 0, got {self.step}")

    @classmethod
    def for_params(cls, params, beta1=0.9, beta2=0.999, eps=1e-8):
        z = np.zeros_like(np.asarray(params, dtype=np.float64))
        return cls(z, z.copy(), 0, beta1, beta2, eps)


def adam_step(params, grads, state, lr):
    """One Adam update. Returns (new_params, new_state); inputs are untouched."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise DimensionError(
            f"adam_step: params shape {params.shape} != grads shape {grads.shape}"
        )
    if params.shape != state.m.shape:
        raise DimensionError(
            f"adam_step: params shape {params.shape} != moment shape {state.m.shape}"
        )
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, AdamState(m, v, t, state.beta1, state.beta2, state.eps)
