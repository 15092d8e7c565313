"""Adam with bias correction, as a pure function over explicit state."""
from dataclasses import dataclass, replace

import numpy as np

from .errors import ShapeError


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, param, **hyper):
        shape = np.shape(param)
        return cls(m=np.zeros(shape), v=np.zeros(shape), **hyper)


def adam_step(param, grad, state):
    """Return ``(new_param, new_state)``; inputs are left untouched."""
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if not (param.shape == grad.shape == state.m.shape == state.v.shape):
        raise ShapeError(
            f"adam_step shape mismatch: param {param.shape}, grad {grad.shape}, "
            f"m {state.m.shape}, v {state.v.shape}",
            param.shape, grad.shape,
        )
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_param = param - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_param, replace(state, m=m, v=v, t=t)
