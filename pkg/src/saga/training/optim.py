"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ShapeError
from ..tensor import Tensor


@dataclass
class AdamState:
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def zeros(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls(0, [np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])

    def to_named(self, names: Sequence[str]) -> dict:
        """Checkpoint form: ``{"step", "tensors": [(name, array), ...]}``."""
        tensors = [(f"m.{n}", m) for n, m in zip(names, self.m)] + [(f"v.{n}", v) for n, v in zip(names, self.v)]
        return {"step": self.step, "tensors": tensors}

    @classmethod
    def from_named(cls, state: dict, names: Sequence[str]) -> "AdamState":
        lookup = dict(state["tensors"])
        return cls(int(state["step"]), [lookup[f"m.{n}"] for n in names], [lookup[f"v.{n}"] for n in names])


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState, lr: float = 1e-3,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> AdamState:
    """One in-place Adam update of ``params``; returns the advanced ``state``."""
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if not (len(params) == len(grads) == len(state.m)):
        raise ShapeError(f"{len(params)} params, {len(grads)} grads, {len(state.m)} moment slots")
    b1, b2 = betas
    state.step += 1
    t = state.step
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape or state.m[i].shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.name or i} {p.shape}")
        m = state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        v = state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data = (p.data - update).astype(p.data.dtype, copy=False)
    return state
