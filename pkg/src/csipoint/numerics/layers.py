"""Parameter containers and the layers built on the functional primitives."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from ..errors import ContractError
from . import functional as F
from .tensor import Tensor


class Parameter(Tensor):
    """A trainable leaf tensor."""

    __slots__ = ()

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    """Minimal module tree: named parameters, buffers, train/eval mode."""

    def __init__(self):
        self.training = True

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def _buffer_slots(self, prefix: str = "") -> Iterator[tuple[str, "Module", str]]:
        for name in self._buffer_names():
            yield prefix + name, self, name
        for name, child in self.children():
            yield from child._buffer_slots(f"{prefix}{name}.")

    def named_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        for path, owner, name in self._buffer_slots():
            yield path, owner._get_buffer(name)

    def _buffer_names(self) -> tuple[str, ...]:
        return ()

    def _get_buffer(self, name: str) -> np.ndarray:
        raise KeyError(name)

    def _set_buffer(self, name: str, value: np.ndarray) -> None:
        raise KeyError(name)

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def requires_grad_(self, flag: bool) -> "Module":
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state: OrderedDict[str, np.ndarray] = OrderedDict()
        for name, p in self.named_parameters():
            state[name] = p.data.copy()
        for name, b in self.named_buffers():
            state[name] = np.array(b, dtype=np.float64).copy()
        return state

    def load_state_dict(self, state) -> None:
        own = self.state_dict()
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise ContractError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        params = dict(self.named_parameters())
        slots = {path: (owner, name) for path, owner, name in self._buffer_slots()}
        for key, value in state.items():
            value = np.array(value, dtype=np.float64)
            if value.shape != own[key].shape:
                raise ContractError(f"{key}: shape {value.shape} != {own[key].shape}")
            if key in params:
                params[key].data = value
            else:
                owner, name = slots[key]
                owner._set_buffer(name, value)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


def _fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv1d(Module):
    """Pointwise convolution, channels ``c_in -> c_out``."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        super().__init__()
        self.weight = Parameter(_fan_in_uniform(rng, (c_out, c_in, 1), c_in))
        self.bias = Parameter(_fan_in_uniform(rng, (c_out,), c_in))

    def forward(self, x):
        return F.conv1d(x, self.weight, self.bias)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        super().__init__()
        self.weight = Parameter(_fan_in_uniform(rng, (d_out, d_in), d_in))
        self.bias = Parameter(_fan_in_uniform(rng, (d_out,), d_in))

    def forward(self, x):
        return F.fully_connected(x, self.weight, self.bias)


class BatchNorm1d(Module):
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.eps = eps
        self.stats = F.RunningStats(channels, momentum)

    def forward(self, x):
        return F.batch_norm(x, self.gamma, self.beta, self.training, self.stats, self.eps)

    def _buffer_names(self):
        return ("running_mean", "running_var")

    def _get_buffer(self, name):
        return self.stats.mean if name == "running_mean" else self.stats.var

    def _set_buffer(self, name, value):
        if name == "running_mean":
            self.stats.mean = value
        elif name == "running_var":
            self.stats.var = value
        else:
            raise KeyError(name)


class ConvBlock(Module):
    """conv1d -> batch norm -> relu."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        super().__init__()
        self.conv = Conv1d(c_in, c_out, rng)
        self.bn = BatchNorm1d(c_out)

    def forward(self, x):
        return F.relu(self.bn(self.conv(x)))
