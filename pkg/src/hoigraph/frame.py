"""Frame-level temporal subnet: bidirectional recurrence per node track."""
from __future__ import annotations

import numpy as np

from .nn import GRUCell, Linear, Module, zeros_state
from .tensor import Tensor, as_tensor, concat, relu, softmax, stack, tanh


def _as_batch(seq: Tensor) -> tuple[Tensor, bool]:
    seq = as_tensor(seq)
    if seq.ndim == 2:
        return seq.reshape((1,) + seq.shape), True
    return seq, False


def run_direction(cell: GRUCell, seq: Tensor, reverse: bool = False) -> Tensor:
    """(B, T, D) -> (B, T, H), zero initial state."""
    x_proj = cell.project_inputs(seq)
    batch, steps = seq.shape[0], seq.shape[1]
    h = zeros_state((batch,), cell.hidden, seq.dtype)
    outs: list[Tensor] = [None] * steps  # type: ignore[list-item]
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    for t in order:
        h = cell.step(x_proj[:, t], h)
        outs[t] = h
    return stack(outs, axis=1)


def bi_rnn_forward(seq, forward: GRUCell, backward: GRUCell) -> Tensor:
    """(T, D) or (B, T, D) -> per-step [forward state || backward state]."""
    x, squeeze = _as_batch(seq)
    out = concat([run_direction(forward, x), run_direction(backward, x, reverse=True)], axis=-1)
    return out[0] if squeeze else out


def aggregate_frame_scores(logits) -> Tensor:
    """softmax over classes of the per-class sum across frames; (..., T, K) -> (..., K)."""
    return softmax(as_tensor(logits).sum(axis=-2), axis=-1)


class FrameBranch(Module):
    """Temporal model for one node role: states -> embedding -> per-frame logits."""

    def __init__(self, d_seq: int, hidden: int, d_emb: int, classes: int, frames: int,
                 rng: np.random.Generator, dtype=np.float64, mlp: bool = False):
        self.mlp = mlp
        self.frames = frames
        if mlp:
            # flatten-over-time baseline; one state shared by every frame
            self.flat = Linear(frames * d_seq, 2 * hidden, rng, dtype)
        else:
            self.rnn_fwd = GRUCell(d_seq, hidden, rng, dtype)
            self.rnn_bwd = GRUCell(d_seq, hidden, rng, dtype)
        self.embed = Linear(2 * hidden, d_emb, rng, dtype)
        self.classify = Linear(d_emb, classes, rng, dtype)

    def states(self, seq: Tensor) -> Tensor:
        if not self.mlp:
            return bi_rnn_forward(seq, self.rnn_fwd, self.rnn_bwd)
        b, t, d = seq.shape
        h = relu(self.flat(seq.reshape(b, t * d)))
        return stack([h] * t, axis=1)

    def __call__(self, seq: Tensor) -> tuple[Tensor, Tensor]:
        """(B, T, D_seq) -> logits (B, T, K), embeddings (B, T, D_emb)."""
        emb = tanh(self.embed(self.states(seq)))
        return self.classify(emb), emb


class FrameTemporalSubnet(Module):
    def __init__(self, d_emb: int, hidden: int, frames: int, rng: np.random.Generator,
                 dtype=np.float64, n_subactivities: int = 10, n_affordances: int = 12,
                 mlp: bool = False, human_concat: bool = True):
        self.human_concat = human_concat
        self.human = FrameBranch(d_emb, hidden, d_emb, n_subactivities, frames, rng, dtype, mlp)
        obj_in = 2 * d_emb if human_concat else d_emb
        self.object = FrameBranch(obj_in, hidden, d_emb, n_affordances, frames, rng, dtype, mlp)

    def human_frame_pass(self, phi) -> tuple[Tensor, Tensor]:
        """phi (T, D) -> logits H_{m,t} (T, 10), embeddings Phi (T, D_emb)."""
        logits, emb = self.human(as_tensor(phi).reshape((1,) + tuple(phi.shape)))
        return logits[0], emb[0]

    def object_frame_pass(self, phi, theta) -> tuple[Tensor, Tensor]:
        """phi (T, D), theta (N, T, D) -> logits (N, T, 12), embeddings Theta (N, T, D_emb)."""
        theta = as_tensor(theta)
        if self.human_concat:
            n = theta.shape[0]
            phi_rep = stack([as_tensor(phi)] * n, axis=0)
            theta = concat([phi_rep, theta], axis=-1)
        return self.object(theta)
