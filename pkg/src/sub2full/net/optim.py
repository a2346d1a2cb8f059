"""Adam with bias correction, operating in place on DenoiserParams."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import ValidationError


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, lr: float = 1e-3, **kw) -> "AdamState":
        return cls(lr=lr, m=params.zeros_like(), v=params.zeros_like(), **kw)

    def copy(self) -> "AdamState":
        return AdamState(
            self.lr, self.beta1, self.beta2, self.eps, self.t,
            {k: a.copy() for k, a in self.m.items()}, {k: a.copy() for k, a in self.v.items()},
        )


def adam_step(params, grads: dict[str, np.ndarray], state: AdamState):
    """One Adam update; returns (params, state) after mutating both."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in block {name}")
        if g.shape != params[name].shape or name not in state.m:
            raise ValidationError(f"gradient/state mismatch for block {name}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, g in grads.items():
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        step = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        params[name] -= step.astype(params[name].dtype, copy=False)
    params.version += 1
    return params, state
