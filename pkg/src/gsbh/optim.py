"""AdamW with linear warmup and linear decay."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gsbh import kernels
from gsbh.errors import ContractError
from gsbh.tensor import Tensor

BETAS = (0.9, 0.999)
EPS = 1e-8


@dataclass
class OptimizerState:
    base_lr: float = 1e-4
    weight_decay: float = 1e-4
    warmup_steps: int = 1000
    total_steps: int = 20000
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.warmup_steps < 1 or self.total_steps < 1:
            raise ValueError("warmup_steps and total_steps must be positive")


def lr_schedule(step: int, state: OptimizerState) -> float:
    """Learning rate at ``step``: linear ramp from 0, then linear decay to 0."""
    if step <= state.warmup_steps:
        return state.base_lr * step / state.warmup_steps
    span = state.total_steps - state.warmup_steps
    return state.base_lr * max(state.total_steps - step, 0) / span


def adamw_step(params: dict[str, Tensor], state: OptimizerState, lr: float) -> None:
    """One decoupled-weight-decay Adam update, in place on ``params`` and ``state``."""
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise ContractError(f"no gradient for parameter(s): {', '.join(missing[:5])}")
    b1, b2 = BETAS
    state.step += 1
    t = state.step
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        m = state.first_moment.get(name)
        if m is None:
            m = state.first_moment[name] = np.zeros_like(p.data)
            state.second_moment[name] = np.zeros_like(p.data)
        kernels.adamw_update(p.data.reshape(-1), np.ascontiguousarray(p.grad, dtype=np.float64).reshape(-1),
                             m.reshape(-1), state.second_moment[name].reshape(-1),
                             lr, state.weight_decay, b1, b2, c1, c2, EPS)
