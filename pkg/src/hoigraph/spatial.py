"""Per-frame adaptive graph convolution over the human + object nodes."""
from __future__ import annotations

import math

import numpy as np

from .nn import Linear, Module, uniform_param, zeros_param
from .tensor import ContractError, Tensor, as_tensor, matmul, relu, softmax


def init_base_adjacency(n_objects: int) -> np.ndarray:
    """1 on human-object edges (node 0 is the human), 0 elsewhere including the diagonal."""
    if n_objects < 0:
        raise ContractError("object count must be >= 0")
    a = np.zeros((n_objects + 1, n_objects + 1))
    a[0, 1:] = 1.0
    a[1:, 0] = 1.0
    return a


def compute_data_adjacency(x: Tensor, w_c1: Tensor, w_c2: Tensor) -> Tensor:
    """C = row-softmax((X W_c1)(X W_c2)^T / sqrt(d_e)); works on (..., nodes, D)."""
    q = matmul(x, w_c1)
    k = matmul(x, w_c2)
    scale = 1.0 / math.sqrt(w_c1.shape[-1])
    return softmax(matmul(q, k.swapaxes(-1, -2)) * scale, axis=-1)


class AGCNBlock(Module):
    """relu((A + B + C) X W + bias) + R(X), applied per frame."""

    def __init__(self, d_prev: int, d_next: int, d_embed: int, max_nodes: int,
                 rng: np.random.Generator, dtype=np.float64, learned_adjacency: bool = True,
                 data_adjacency: bool = True, residual: bool = True):
        self.d_prev, self.d_next, self.max_nodes = d_prev, d_next, max_nodes
        self.weight = uniform_param(rng, (d_prev, d_next), d_prev, dtype)
        self.bias = uniform_param(rng, (d_next,), d_prev, dtype)
        self.adj_learned = zeros_param((max_nodes, max_nodes), dtype) if learned_adjacency else None
        if data_adjacency:
            self.w_c1 = uniform_param(rng, (d_prev, d_embed), d_prev, dtype)
            self.w_c2 = uniform_param(rng, (d_prev, d_embed), d_prev, dtype)
        else:
            self.w_c1 = self.w_c2 = None
        self.residual = residual
        self.residual_proj = (Linear(d_prev, d_next, rng, dtype, bias=False)
                              if residual and d_prev != d_next else None)
        self._dtype = dtype

    def adjacency(self, x: Tensor) -> Tensor:
        n = x.shape[-2]
        if n > self.max_nodes:
            raise ContractError(f"{n} nodes exceed max_nodes={self.max_nodes}")
        adj = as_tensor(init_base_adjacency(n - 1).astype(self._dtype))
        if self.adj_learned is not None:
            adj = adj + self.adj_learned[:n, :n]
        if self.w_c1 is not None:
            adj = adj + compute_data_adjacency(x, self.w_c1, self.w_c2)
        return adj

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_prev:
            raise ContractError(f"block expects width {self.d_prev}, got {x.shape[-1]}")
        y = relu(matmul(self.adjacency(x), matmul(x, self.weight)) + self.bias)
        if not self.residual:
            return y
        return y + (self.residual_proj(x) if self.residual_proj is not None else x)


class SpatialSubnet(Module):
    """Stack of AGCN blocks; row 0 of each frame's output is phi_t, rows 1.. are theta."""

    def __init__(self, d_in: int, widths: tuple[int, ...], d_embed: int, max_nodes: int,
                 rng: np.random.Generator, dtype=np.float64, learned_adjacency: bool = True,
                 data_adjacency: bool = True, residual: bool = True):
        dims = (d_in,) + tuple(widths)
        self.blocks = [AGCNBlock(a, b, d_embed, max_nodes, rng, dtype, learned_adjacency,
                                 data_adjacency, residual) for a, b in zip(dims[:-1], dims[1:])]

    @property
    def out_width(self) -> int:
        return self.blocks[-1].d_next

    def __call__(self, x: Tensor) -> Tensor:
        """(T, N+1, D_in+4) -> (T, N+1, D_emb); frames never mix."""
        x = as_tensor(x)
        for block in self.blocks:
            x = block(x)
        return x


def agcn_block(x, block: AGCNBlock) -> Tensor:
    return block(as_tensor(x))


def spatial_forward(x, subnet: SpatialSubnet) -> Tensor:
    return subnet(as_tensor(x))
