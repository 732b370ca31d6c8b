"""
Adam with bias correction.
"""

from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from ..errors import NonFiniteGradientError
from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 0.0005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def create(cls, params: Mapping[str, Tensor], lr: float = 0.0005, beta1: float = 0.9,
               beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(
            lr=lr, beta1=beta1, beta2=beta2, eps=eps,
            m={name: np.zeros_like(p.data) for name, p in params.items()},
            v={name: np.zeros_like(p.data) for name, p in params.items()},
        )


def check_finite(grads: Mapping[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(
                f"Non-finite gradient for parameter {name}",
                parameter=name,
                nan=int(np.isnan(g).sum()),
                inf=int(np.isinf(g).sum()),
                shape=g.shape,
            )


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamState) -> None:
    """Update ``params`` in place; every gradient is checked before any parameter moves"""
    check_finite(grads)
    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t

    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        p.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.data.dtype)


class Adam:
    """Optimizer over a fixed set of named parameters, reading ``param.grad``"""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 0.0005, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.state = AdamState.create(self.params, lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def gradients(self) -> Dict[str, np.ndarray]:
        return {name: (p.grad if p.grad is not None else np.zeros_like(p.data)) for name, p in self.params.items()}

    def step(self) -> None:
        adam_step(self.params, self.gradients(), self.state)
