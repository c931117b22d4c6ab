"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CoverageError, NumericError, ShapeError
from .tensor import Tensor

__all__ = ["AdamState", "adam_step", "Adam"]


@dataclass
class AdamState:
    lr: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError(f"learning rate must be non-negative, got {self.lr}")
        for b in (self.beta1, self.beta2):
            if not 0.0 <= b < 1.0:
                raise ValueError(f"Adam betas must lie in [0, 1), got {b}")
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")

    def hyperparameters(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                "eps": self.eps, "step_count": self.step_count}


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState) -> AdamState:
    """Apply one Adam update to ``params`` in place.

    Every parameter must have a finite gradient of matching shape; nothing is
    modified if any check fails. Moments are created lazily on first use.
    """
    for name, p in params.items():
        if name not in grads:
            raise CoverageError(f"no gradient for parameter {name!r}")
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=p.dtype)
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.first_moment[name] = m
        state.second_moment[name] = v
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - update).astype(p.dtype, copy=False)
    return state


class Adam:
    """Binds an :class:`AdamState` to a fixed set of named parameters."""

    def __init__(self, params: dict[str, Tensor], lr: float = 0.0002, beta1: float = 0.5,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = value

    def step(self, grads: dict[str, np.ndarray]) -> None:
        adam_step(self.params, grads, self.state)

    def state_tensors(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for name in self.params:
            if name in self.state.first_moment:
                out[f"{prefix}.m.{name}"] = self.state.first_moment[name]
                out[f"{prefix}.v.{name}"] = self.state.second_moment[name]
        return out

    def load_state_tensors(self, prefix: str, tensors: dict[str, np.ndarray], hyper: dict) -> None:
        self.state.lr = hyper["lr"]
        self.state.beta1 = hyper["beta1"]
        self.state.beta2 = hyper["beta2"]
        self.state.eps = hyper["eps"]
        self.state.step_count = hyper["step_count"]
        for name, p in self.params.items():
            m = tensors.get(f"{prefix}.m.{name}")
            if m is not None:
                self.state.first_moment[name] = np.array(m, dtype=p.dtype)
                self.state.second_moment[name] = np.array(tensors[f"{prefix}.v.{name}"], dtype=p.dtype)
