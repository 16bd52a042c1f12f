"""Parameter containers and the basic 1-D network layers."""

from __future__ import annotations

import math

import numpy as np

from . import ops
from .errors import ConfigError
from .tensor import Tensor

__all__ = ["Parameter", "Module", "ModuleList", "Conv1d", "BatchNorm1d",
           "AvgPool1d", "Dropout", "Linear", "set_lr_group"]


class Parameter(Tensor):
    """A trainable tensor with a name path and a learning-rate group tag."""

    __slots__ = ("name", "lr_group")

    def __init__(self, data, name: str = "", lr_group: str = "default"):
        super().__init__(np.array(data), requires_grad=True)
        self.name = name
        self.lr_group = lr_group


class Module:
    """Minimal module container tracking parameters in declaration order."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, key, value):
        if isinstance(value, Parameter):
            self._params[key] = value
        elif isinstance(value, Module):
            self._modules[key] = value
        object.__setattr__(self, key, value)

    def named_parameters(self, prefix: str = ""):
        for key, p in self._params.items():
            yield (f"{prefix}{key}", p)
        for key, m in self._modules.items():
            yield from m.named_parameters(prefix=f"{prefix}{key}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def count_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def train(self, flag: bool = True):
        object.__setattr__(self, "training", flag)
        for m in self._modules.values():
            m.train(flag)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


class ModuleList(Module):
    """Ordered list of submodules registered under their index."""

    def __init__(self, modules=()):
        super().__init__()
        self._items = []
        for m in modules:
            self.append(m)

    def append(self, module: Module):
        self._modules[str(len(self._items))] = module
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


def set_lr_group(module: Module, group: str) -> None:
    """Tag every parameter under ``module`` with a learning-rate group."""
    for _, p in module.named_parameters():
        p.lr_group = group


class Conv1d(Module):
    """Valid 1-D convolution with He-initialized kernels."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 rng: np.random.Generator, dtype=np.float64, label: str = "conv"):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.label = label
        std = math.sqrt(2.0 / (kernel * in_channels))
        self.weight = Parameter(rng.normal(0.0, std, (kernel, in_channels, out_channels)).astype(dtype))
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv1d(x, self.weight, self.bias, label=self.label)

    __call__ = forward

    def out_len(self, length: int) -> int:
        return length - self.kernel + 1


class BatchNorm1d(Module):
    """Channel-wise batch normalization over batch and time."""

    def __init__(self, channels: int, dtype=np.float64, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm(x, self.gamma, self.beta, self.running_mean,
                              self.running_var, self.training,
                              momentum=self.momentum, eps=self.eps)

    __call__ = forward


class AvgPool1d(Module):
    def forward(self, x: Tensor) -> Tensor:
        return ops.avg_pool1d(x)

    __call__ = forward


class Dropout(Module):
    """Inverted dropout drawing its mask from a module-owned generator."""

    def __init__(self, p: float, rng: np.random.Generator):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p
        self.rng = rng

    def forward(self, x: Tensor) -> Tensor:
        return ops.dropout(x, self.p, self.training, self.rng)

    __call__ = forward


class Linear(Module):
    """Fully connected layer with uniform(-1/sqrt(F), 1/sqrt(F)) init."""

    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        bound = 1.0 / math.sqrt(in_features)
        self.weight = Parameter(rng.uniform(-bound, bound, (in_features, out_features)).astype(dtype))
        self.bias = Parameter(rng.uniform(-bound, bound, out_features).astype(dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)

    __call__ = forward
