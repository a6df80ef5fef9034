"""Parameter containers and the fan-in initialization rule."""
from __future__ import annotations

import math

import numpy as np

from .tensor import Parameter, Tensor


def uniform_param(rng: np.random.Generator, name: str, shape, fan_in: int, dtype=np.float32) -> Parameter:
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialized parameter."""
    bound = 1.0 / math.sqrt(fan_in)
    return Parameter(rng.uniform(-bound, bound, size=shape).astype(dtype), name)


def const_param(name: str, shape, value: float, dtype=np.float32) -> Parameter:
    return Parameter(np.full(shape, value, dtype=dtype), name)


class Module:
    """Base class: parameters are discovered by walking instance attributes.

    A Parameter reachable through several attributes (a shared weight) is
    reported once.
    """

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        seen: set[int] = set()
        self._collect(out, seen)
        return out

    def _collect(self, out, seen):
        for value in vars(self).values():
            _collect_value(value, out, seen)

    def named_parameters(self) -> dict[str, Parameter]:
        named = {}
        for p in self.parameters():
            if p.name in named:
                raise ValueError(f"duplicate parameter name {p.name!r}")
            named[p.name] = p
        return named

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = self.named_parameters()
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in params.items():
            arr = state[name]
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = np.array(arr, dtype=p.dtype, copy=True)


def _collect_value(value, out, seen):
    if isinstance(value, Parameter):
        if id(value) not in seen:
            seen.add(id(value))
            out.append(value)
    elif isinstance(value, Module):
        value._collect(out, seen)
    elif isinstance(value, (list, tuple)):
        for v in value:
            _collect_value(v, out, seen)
    elif isinstance(value, dict):
        for v in value.values():
            _collect_value(v, out, seen)


class Linear(Module):
    def __init__(self, rng, name, d_in, d_out, bias=True, dtype=np.float32):
        self.weight = uniform_param(rng, f"{name}.weight", (d_in, d_out), d_in, dtype)
        self.bias = uniform_param(rng, f"{name}.bias", (d_out,), d_in, dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y
