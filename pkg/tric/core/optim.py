"""AdamW with decoupled weight decay."""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .numcore import Tensor
from ..utility.constant import DEFAULT_BETAS, DEFAULT_EPS, DEFAULT_LR, DEFAULT_WEIGHT_DECAY


@dataclass
class AdamWState:
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)


def adamw_step(
    params: Sequence[Tensor],
    grads: Sequence[Optional[np.ndarray]],
    state: AdamWState,
    lr: float = DEFAULT_LR,
    betas: Tuple[float, float] = DEFAULT_BETAS,
    eps: float = DEFAULT_EPS,
    weight_decay: float = DEFAULT_WEIGHT_DECAY,
) -> AdamWState:
    """
    p <- p (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps), updating ``params``
    in place. Parameters whose gradient is None are left untouched.
    """
    if lr <= 0:
        raise ValueError(f"Learning rate must be positive, got {lr}")
    if len(params) != len(grads):
        raise ValueError(f"adamw_step: {len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    beta1, beta2 = betas
    state.step += 1
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step
    for p, grad, m, v in zip(params, grads, state.m, state.v):
        if grad is None:
            continue
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        if weight_decay:
            p.data *= (1.0 - lr * weight_decay)
        p.data -= (lr * (m / correction1) / (np.sqrt(v / correction2) + eps)).astype(p.dtype)
    return state


class AdamW:
    def __init__(self, params: Sequence[Tensor], lr: float = DEFAULT_LR, betas: Tuple[float, float] = DEFAULT_BETAS,
                 eps: float = DEFAULT_EPS, weight_decay: float = DEFAULT_WEIGHT_DECAY):
        if lr <= 0:
            raise ValueError(f"Learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = AdamWState()

    def step(self):
        adamw_step(self.params, [p.grad for p in self.params], self.state, self.lr, self.betas, self.eps,
                   self.weight_decay)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
