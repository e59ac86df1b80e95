"""
Optimizer
Version: 1.0

Adam with bias correction and global-norm gradient clipping.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from services.errors import ContractViolationError
from services.tensor.params import ParamStore


@dataclass
class AdamState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParamStore, learning_rate: float = 1e-4, **kwargs) -> "AdamState":
        """Zero moments mirroring the store's names and shapes."""
        state = cls(learning_rate=learning_rate, **kwargs)
        for name, entry in params.items():
            state.first_moment[name] = np.zeros_like(entry.value)
            state.second_moment[name] = np.zeros_like(entry.value)
        return state


def adam_step(
    params: ParamStore,
    state: AdamState,
    learning_rate: Optional[float] = None,
) -> Tuple[ParamStore, AdamState]:
    """
    One bias-corrected Adam update in place.

    Args:
        params: Store with populated gradients (left untouched)
        state: Moments matching the store
        learning_rate: Override for this step (schedules); defaults to state.learning_rate

    Returns:
        (params, state), both updated in place
    """
    if set(state.first_moment) != set(params.names()):
        raise ContractViolationError("adam state does not match parameter names")

    lr = state.learning_rate if learning_rate is None else learning_rate
    state.step_count += 1
    t = state.step_count
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t

    for name, entry in params.items():
        m = state.first_moment[name]
        v = state.second_moment[name]
        if m.shape != entry.grad.shape:
            raise ContractViolationError(
                f"adam moment for {name}: shape {m.shape} != gradient {entry.grad.shape}"
            )
        g = entry.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        entry.value -= (lr * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(entry.value.dtype, copy=False)

    return params, state


def global_grad_norm(params: ParamStore) -> float:
    total = 0.0
    for _, entry in params.items():
        g = entry.grad.astype(np.float64, copy=False)
        total += float(np.dot(g.ravel(), g.ravel()))
    return math.sqrt(total)


def clip_global_grad_norm(params: ParamStore, max_norm: float = 1.0) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm. Returns the factor."""
    if max_norm <= 0:
        raise ContractViolationError(f"max_norm must be > 0, got {max_norm}")
    norm = global_grad_norm(params)
    # float32 rounding after a previous clip may leave the norm a hair above max_norm
    if norm <= max_norm * (1.0 + 1e-6):
        return 1.0
    factor = max_norm / norm
    for _, entry in params.items():
        entry.grad *= entry.grad.dtype.type(factor)
    return factor
