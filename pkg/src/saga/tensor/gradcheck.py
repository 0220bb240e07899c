"""Central-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, ParameterError
from .core import Graph, Tensor


def grad_check(f: Callable[..., Tensor], x: Tensor | Sequence[Tensor], eps: float = 1e-6) -> float:
    """Compare reverse-mode gradients of scalar ``f`` against finite differences.

    ``f`` is called as ``f(x)`` for a single tensor or ``f(*x)`` for a
    sequence. Every coordinate of every input is perturbed by ``±eps`` in
    place (and restored). Returns the maximum over coordinates of
    ``|ad - fd| / max(1, |ad|, |fd|)``.
    """
    if not 0.0 < eps <= 1e-2:
        raise ParameterError(f"eps must lie in (0, 1e-2], got {eps}")
    xs = [x] if isinstance(x, Tensor) else list(x)

    def call():
        return f(xs[0]) if isinstance(x, Tensor) else f(*xs)

    saved = [t.requires_grad for t in xs]
    for t in xs:
        t.requires_grad = True
        t.grad = None
    try:
        with Graph() as g:
            out = call()
        if not isinstance(out, Tensor) or out.size != 1:
            raise ContractError("grad_check needs a scalar-valued function")
        if out.is_leaf:
            ad = [np.zeros_like(t.data) for t in xs]
        else:
            g.backward(out, leaves=xs)
            ad = [t.grad.copy() for t in xs]
    finally:
        for t, r in zip(xs, saved):
            t.requires_grad = r
            t.grad = None

    worst = 0.0
    for t, a in zip(xs, ad):
        flat = t.data.reshape(-1)
        a = a.reshape(-1).astype(np.float64)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(call().data)
            flat[i] = orig - eps
            fm = float(call().data)
            flat[i] = orig
            fd = (fp - fm) / (2.0 * eps)
            err = abs(a[i] - fd) / max(1.0, abs(a[i]), abs(fd))
            worst = max(worst, err)
    return worst
