"""Parameter containers and small layer building blocks.

A ``Parameter`` is a named trainable tensor with a freeze flag; freezing
removes it from the autodiff graph entirely, so a frozen value is
bit-identical after any number of optimizer steps. Modules form a tree
whose walk produces the stable parameter names used by checkpoints.
"""

from __future__ import annotations

from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from .errors import ConfigurationError
from .ops import batch_norm, pointwise_transform, temporal_conv
from .tensor import Tensor, matmul, reshape, transpose


class Parameter:
    __slots__ = ("tensor", "name", "_frozen")

    def __init__(self, data: np.ndarray, name: str = ""):
        self.tensor = Tensor(data, requires_grad=True)
        self.name = name
        self._frozen = False

    @property
    def frozen(self) -> bool:
        return self._frozen

    @frozen.setter
    def frozen(self, flag: bool):
        self._frozen = bool(flag)
        self.tensor.requires_grad = not self._frozen

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @data.setter
    def data(self, value: np.ndarray):
        self.tensor.data = value.astype(self.tensor.data.dtype, copy=False)

    def __repr__(self):
        return f"Parameter({self.name or '<unnamed>'}, shape={self.tensor.shape}, frozen={self._frozen})"


def fan_in_uniform(rng: np.random.Generator, shape: Tuple[int, ...],
                   fan_in: int, dtype=np.float32) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Minimal container tree with named parameters and buffers."""

    def __init__(self):
        self._params: Dict[str, Parameter] = {}
        self._children: Dict[str, "Module"] = {}
        self._buffers: Dict[str, np.ndarray] = {}
        self.training = True
        self.frozen = False

    # registration -----------------------------------------------------

    def add_param(self, name: str, param: Parameter) -> Parameter:
        self._params[name] = param
        return param

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def add_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        self._buffers[name] = value
        return value

    # traversal ----------------------------------------------------------

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield (prefix + name if prefix else name), p
        for cname, child in self._children.items():
            cp = prefix + cname + "." if prefix else cname + "."
            yield from child.named_parameters(cp)

    def parameters(self) -> Iterator[Parameter]:
        for _, p in self.named_parameters():
            yield p

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name in self._buffers:
            yield (prefix + name if prefix else name), self._buffers[name]
        for cname, child in self._children.items():
            cp = prefix + cname + "." if prefix else cname + "."
            yield from child.named_buffers(cp)

    def set_buffer(self, name: str, value: np.ndarray):
        """Set a possibly nested buffer by its walk name."""
        if "." in name:
            head, rest = name.split(".", 1)
            self._children[head].set_buffer(rest, value)
        else:
            old = self._buffers[name]
            old[...] = value.astype(old.dtype, copy=False)

    def modules(self) -> Iterator["Module"]:
        yield self
        for child in self._children.values():
            yield from child.modules()

    # state -------------------------------------------------------------

    def train(self, flag: bool = True):
        for m in self.modules():
            m.training = flag
        return self

    def eval(self):
        return self.train(False)

    def set_frozen(self, flag: bool):
        """Freeze/unfreeze this subtree, including normalization stats."""
        for m in self.modules():
            m.frozen = flag
            for p in m._params.values():
                p.frozen = flag
        return self

    def forward(self, x: Tensor) -> Tensor:  # pragma: no cover - interface
        raise NotImplementedError

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._order = []
        for m in modules:
            self.append(m)

    def append(self, module: Module):
        self.add_child(str(len(self._order)), module)
        self._order.append(module)

    def __iter__(self):
        return iter(self._order)

    def __getitem__(self, i: int) -> Module:
        return self._order[i]

    def __len__(self):
        return len(self._order)


class ParamList(Module):
    def __init__(self):
        super().__init__()
        self._order = []

    def append(self, param: Parameter):
        self.add_param(str(len(self._order)), param)
        self._order.append(param)

    def __iter__(self):
        return iter(self._order)

    def __getitem__(self, i: int) -> Parameter:
        return self._order[i]

    def __len__(self):
        return len(self._order)


# ----------------------------------------------------------------------
# building blocks


class ConvUnit(Module):
    """1x1 channel mix (k=1) or k x 1 temporal convolution, with bias."""

    def __init__(self, c_in: int, c_out: int, k: int = 1, stride: int = 1,
                 dilation: int = 1, rng: Optional[np.random.Generator] = None,
                 dtype=np.float32):
        super().__init__()
        if k < 1 or (k > 1 and k % 2 == 0):
            raise ConfigurationError(f"kernel size must be 1 or odd, got {k}")
        self.k, self.stride, self.dilation = k, stride, dilation
        rng = rng if rng is not None else np.random.default_rng(0)
        shape = (c_out, c_in) if k == 1 else (c_out, c_in, k)
        self.weight = self.add_param(
            "weight", Parameter(fan_in_uniform(rng, shape, c_in * k, dtype)))
        self.bias = self.add_param(
            "bias", Parameter(np.zeros(c_out, dtype=dtype)))

    def forward(self, x: Tensor) -> Tensor:
        if self.k == 1 and self.stride == 1:
            return pointwise_transform(x, self.weight.tensor, self.bias.tensor)
        w = self.weight.tensor
        if self.k == 1:
            w = reshape(w, w.shape + (1,))
        return temporal_conv(x, w, self.bias.tensor,
                             stride=self.stride, dilation=self.dilation)


class Linear(Module):
    def __init__(self, c_in: int, c_out: int,
                 rng: Optional[np.random.Generator] = None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = self.add_param(
            "weight", Parameter(fan_in_uniform(rng, (c_out, c_in), c_in, dtype)))
        self.bias = self.add_param(
            "bias", Parameter(np.zeros(c_out, dtype=dtype)))

    def forward(self, x: Tensor) -> Tensor:
        w_t = transpose(self.weight.tensor, (1, 0))
        return matmul(x, w_t) + self.bias.tensor


class BatchNorm(Module):
    """Per-channel batch normalization with running statistics.

    A frozen instance always normalizes with its running statistics and
    never updates them, regardless of the training flag.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5,
                 dtype=np.float32):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.gamma = self.add_param("gamma", Parameter(np.ones(channels, dtype=dtype)))
        self.beta = self.add_param("beta", Parameter(np.zeros(channels, dtype=dtype)))
        self.running_mean = self.add_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.running_var = self.add_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        use_batch_stats = self.training and not self.frozen
        return batch_norm(x, self.gamma.tensor, self.beta.tensor,
                          self.running_mean, self.running_var,
                          train=use_batch_stats,
                          momentum=self.momentum, eps=self.eps)
