"""Parameter containers and the layers every network here is built from.

Naming is hierarchical: a parameter reached through ``model.encoder.mnel1.fuse``
is reported as ``encoder.mnel1.fuse.weight``. Batch-norm running statistics are
non-trainable buffers but travel with checkpoints so eval is reproducible.
"""

from __future__ import annotations

from typing import Callable, Iterator, Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data: np.ndarray):
        super().__init__(np.ascontiguousarray(data), requires_grad=True)


def uniform_init(rng: np.random.Generator, fan_in: int, shape, dtype=np.float32) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Minimal layer base: tracks child modules, parameters, and buffers."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray):
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def _set_buffer(self, name: str, value: np.ndarray):
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield (prefix + name, p)
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self._buffers:
            yield (prefix + name, self._buffers[name])
        for name, child in self._children.items():
            yield from child.named_buffers(prefix + name + ".")

    def train(self, flag: bool = True) -> "Module":
        object.__setattr__(self, "training", flag)
        for child in self._children.values():
            child.train(flag)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def cast(self, dtype) -> "Module":
        """In-place dtype change of parameters and buffers (for 64-bit checks)."""
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for mod in self.modules():
            for name, buf in list(mod._buffers.items()):
                mod._set_buffer(name, buf.astype(dtype))
        return self

    def modules(self) -> Iterator["Module"]:
        yield self
        for child in self._children.values():
            yield from child.modules()

    def num_parameters(self) -> int:
        return sum(p.data.size for _, p in self.named_parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    """y = x W + b with W of shape (d_in, d_out)."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 bias: bool = True, dtype=np.float32):
        super().__init__()
        self.d_in, self.d_out = d_in, d_out
        self.weight = Parameter(uniform_init(rng, d_in, (d_in, d_out), dtype))
        self.bias = Parameter(uniform_init(rng, d_in, (d_out,), dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise T.ShapeError(f"linear expects input width {self.d_in}, got {x.shape}")
        y = x @ self.weight
        if self.bias is not None:
            y = y + self.bias
        return y


class BatchNorm(Module):
    """Per-feature normalization over axis 0 (rows are the batch)."""

    def __init__(self, width: int, momentum: float = 0.1, eps: float = 1e-5,
                 dtype=np.float32):
        super().__init__()
        self.width = width
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(width, dtype=dtype))
        self.beta = Parameter(np.zeros(width, dtype=dtype))
        self.register_buffer("running_mean", np.zeros(width, dtype=dtype))
        self.register_buffer("running_var", np.ones(width, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.width:
            raise T.ShapeError(f"batchnorm expects width {self.width}, got {x.shape}")
        if self.training:
            if x.shape[0] < 2:
                raise ValueError(
                    f"batchnorm in train mode needs at least 2 rows, got {x.shape[0]}")
            mu = x.mean(axis=0, keepdims=True)
            xc = x - mu
            var = (xc * xc).mean(axis=0, keepdims=True)
            # biased variance both for normalization and for the running stat
            m = self.momentum
            self._set_buffer("running_mean",
                             (1 - m) * self.running_mean + m * mu.data.reshape(-1))
            self._set_buffer("running_var",
                             (1 - m) * self.running_var + m * var.data.reshape(-1))
            xn = xc / T.tsqrt(var + self.eps)
        else:
            rm = Tensor(self.running_mean.reshape(1, -1))
            rv = Tensor(self.running_var.reshape(1, -1))
            xn = (x - rm) / T.tsqrt(rv + self.eps)
        return xn * self.gamma + self.beta


class LayerNorm(Module):
    """Per-row normalization; used by the segment transformer block."""

    def __init__(self, width: int, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.width = width
        self.eps = eps
        self.gamma = Parameter(np.ones(width, dtype=dtype))
        self.beta = Parameter(np.zeros(width, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=1, keepdims=True)
        return (xc / T.tsqrt(var + self.eps)) * self.gamma + self.beta


class Dropout(Module):
    """Seeded dropout; identity (bit-exact) outside training."""

    def __init__(self, p: float):
        super().__init__()
        self.p = p

    def forward(self, x: Tensor, seed: Optional[int] = None) -> Tensor:
        if not self.training or self.p == 0.0 or seed is None:
            return x
        return T.dropout(x, self.p, seed)


class MLP(Module):
    """linear -> BN -> ReLU block; ReLU optionally dropped for residual feeds."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 relu: bool = True, dtype=np.float32):
        super().__init__()
        self.linear = Linear(d_in, d_out, rng, dtype=dtype)
        self.bn = BatchNorm(d_out, dtype=dtype)
        self.use_relu = relu

    def forward(self, x: Tensor) -> Tensor:
        y = self.bn(self.linear(x))
        return T.relu(y) if self.use_relu else y
