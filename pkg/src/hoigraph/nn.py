"""Parameter containers and the few layers the model is built from."""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from .tensor import Tensor, concat, matmul, sigmoid, tanh


class Module:
    """Holds parameters as attributes; discovery follows attribute insertion order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> "ParamStore":
        return ParamStore(self.named_parameters())


class ParamStore(OrderedDict):
    """Named, ordered learnable tensors."""

    def zero_grad(self) -> None:
        for p in self.values():
            p.zero_grad()

    def numel(self) -> int:
        return int(sum(p.data.size for p in self.values()))


def uniform_param(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def zeros_param(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float64,
                 bias: bool = True):
        self.weight = uniform_param(rng, (d_in, d_out), d_in, dtype)
        self.bias = uniform_param(rng, (d_out,), d_in, dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class GRUCell(Module):
    """Gated recurrent cell, gate order (reset, update, candidate).

    h' = (1 - z) * n + z * h with n = tanh(x W_n + b_n + r * (h U_n + c_n)).
    """

    def __init__(self, d_in: int, hidden: int, rng: np.random.Generator, dtype=np.float64):
        self.hidden = hidden
        self.w_in = uniform_param(rng, (d_in, 3 * hidden), hidden, dtype)
        self.w_hid = uniform_param(rng, (hidden, 3 * hidden), hidden, dtype)
        self.b_in = uniform_param(rng, (3 * hidden,), hidden, dtype)
        self.b_hid = uniform_param(rng, (3 * hidden,), hidden, dtype)

    def project_inputs(self, x: Tensor) -> Tensor:
        """Input-side gate pre-activations for every step at once."""
        return matmul(x, self.w_in) + self.b_in

    def step(self, x_proj: Tensor, h: Tensor) -> Tensor:
        H = self.hidden
        h_proj = matmul(h, self.w_hid) + self.b_hid
        r = sigmoid(x_proj[..., :H] + h_proj[..., :H])
        z = sigmoid(x_proj[..., H:2 * H] + h_proj[..., H:2 * H])
        n = tanh(x_proj[..., 2 * H:] + r * h_proj[..., 2 * H:])
        return n + z * (h - n)

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        return self.step(self.project_inputs(x), h)


def zeros_state(batch_shape: tuple[int, ...], hidden: int, dtype) -> Tensor:
    return Tensor(np.zeros(batch_shape + (hidden,), dtype=dtype))


def cat(*tensors: Tensor) -> Tensor:
    return concat(tensors, axis=-1)
