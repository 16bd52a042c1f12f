"""Adam optimizer with learning-rate groups, plus a finite-difference oracle."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .tensor import Tensor, no_grad

__all__ = ["AdamState", "Adam", "grad_check"]


class AdamState:
    """First/second moment estimates and step counter for one parameter."""

    __slots__ = ("m", "v", "t")

    def __init__(self, shape, dtype):
        self.m = np.zeros(shape, dtype=dtype)
        self.v = np.zeros(shape, dtype=dtype)
        self.t = 0


class Adam:
    """Adam with bias correction; parameters may carry per-group learning rates.

    Each parameter's ``lr_group`` tag selects an entry of ``group_lrs``
    (falling back to ``lr``).  ``decay_lr`` applies the per-epoch
    multiplicative schedule to every group.
    """

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 group_lrs: dict | None = None):
        self.params = list(params)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.group_lrs = dict(group_lrs) if group_lrs else {}
        self.group_lrs.setdefault("default", lr)
        for p in self.params:
            group = getattr(p, "lr_group", "default")
            if group not in self.group_lrs:
                raise ConfigError(f"parameter group '{group}' has no learning rate")
        self.state = {id(p): AdamState(p.shape, p.dtype) for p in self.params}

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def decay_lr(self, factor: float) -> None:
        for k in self.group_lrs:
            self.group_lrs[k] *= factor

    def lr_for(self, param) -> float:
        return self.group_lrs[getattr(param, "lr_group", "default")]

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                continue
            st = self.state[id(p)]
            st.t += 1
            g = p.grad.astype(p.dtype, copy=False)
            st.m = self.beta1 * st.m + (1.0 - self.beta1) * g
            st.v = self.beta2 * st.v + (1.0 - self.beta2) * (g * g)
            m_hat = st.m / (1.0 - self.beta1 ** st.t)
            v_hat = st.v / (1.0 - self.beta2 ** st.t)
            p.data = p.data - self.lr_for(p) * m_hat / (np.sqrt(v_hat) + self.eps)


def grad_check(fn, tensors, eps: float = 1e-5, max_coords: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error between backward() and central finite differences.

    ``fn`` must rebuild a scalar-valued graph from the given leaf tensors on
    every call.  For large inputs a random coordinate subset is checked
    (``max_coords`` per tensor).  Relative error uses
    ``|a - n| / max(|a|, |n|, 1)`` so near-zero gradients do not blow up.
    """
    tensors = list(tensors)
    for t in tensors:
        t.grad = None
    out = fn()
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else np.array(t.grad, dtype=np.float64)
                for t in tensors]

    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for t, ana in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        n = flat.size
        coords = np.arange(n)
        if max_coords is not None and n > max_coords:
            coords = rng.choice(n, size=max_coords, replace=False)
        for c in coords:
            orig = flat[c]
            with no_grad():
                flat[c] = orig + eps
                f_plus = fn().item()
                flat[c] = orig - eps
                f_minus = fn().item()
            flat[c] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = ana.reshape(-1)[c]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
            worst = max(worst, err)
    return worst
