from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import ParamStore
from .tensor import ContractError


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Bias-corrected Adam. Gradients are read, never cleared."""

    def __init__(self, params: ParamStore, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.state = AdamState(beta1, beta2, eps)
        for name, p in params.items():
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def step(self, lr: float) -> None:
        st = self.state
        for name, p in self.params.items():
            if p.grad is None:
                raise ContractError(f"parameter {name!r} has no gradient")
        st.step += 1
        c1 = 1.0 - st.beta1 ** st.step
        c2 = 1.0 - st.beta2 ** st.step
        for name, p in self.params.items():
            g = p.grad
            m, v = st.m[name], st.v[name]
            m *= st.beta1
            m += (1.0 - st.beta1) * g
            v *= st.beta2
            v += (1.0 - st.beta2) * g * g
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + st.eps)).astype(p.dtype, copy=False)


def adam_step(optimizer: Adam, lr: float) -> None:
    optimizer.step(lr)
