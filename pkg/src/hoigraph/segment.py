"""Segment-level temporal subnet: attention pooling and causal recurrence."""
from __future__ import annotations

import numpy as np

from .nn import GRUCell, Linear, Module, zeros_state
from .tensor import Tensor, as_tensor, concat, softmax, stack, tanh


class AttentionPool(Module):
    """Scores each frame with a tanh MLP, softmaxes over time, returns the weighted sum."""

    def __init__(self, d_emb: int, hidden: int, rng: np.random.Generator, dtype=np.float64,
                 last_frame: bool = False):
        self.last_frame = last_frame
        if not last_frame:
            self.score_hidden = Linear(d_emb, hidden, rng, dtype)
            self.score_out = Linear(hidden, 1, rng, dtype)

    def __call__(self, emb: Tensor) -> tuple[Tensor, np.ndarray]:
        """(B, T, D) -> pooled (B, D) and weights (B, T)."""
        emb = as_tensor(emb)
        b, t, _ = emb.shape
        if self.last_frame:
            weights = np.zeros((b, t))
            weights[:, -1] = 1.0
            return emb[:, t - 1], weights
        scores = self.score_out(tanh(self.score_hidden(emb))).reshape(b, t)
        a = softmax(scores, axis=-1)
        pooled = (a.reshape(b, 1, t) @ emb).reshape(b, emb.shape[-1])
        return pooled, a.data


def attention_pool(emb, pool: AttentionPool) -> tuple[Tensor, np.ndarray]:
    """(T, D) -> pooled (D,) and weights (T,)."""
    emb = as_tensor(emb)
    pooled, weights = pool(emb.reshape((1,) + emb.shape))
    return pooled[0], weights[0]


def segment_rnn_forward(pooled, cell: GRUCell) -> Tensor:
    """(M, D) -> (M, H); state m only sees segments 0..m."""
    pooled = as_tensor(pooled)
    h = zeros_state((1,), cell.hidden, pooled.dtype)
    x_proj = cell.project_inputs(pooled)
    outs = []
    for m in range(pooled.shape[0]):
        h = cell.step(x_proj[m:m + 1], h)
        outs.append(h[0])
    return stack(outs, axis=0)


class SegmentHead(Module):
    """Causal recurrence over pooled segment embeddings plus the final classifiers."""

    def __init__(self, d_emb: int, hidden: int, rng: np.random.Generator, dtype=np.float64,
                 n_subactivities: int = 10, n_affordances: int = 12, human_concat: bool = True):
        self.human_concat = human_concat
        self.human_cell = GRUCell(d_emb, hidden, rng, dtype)
        self.object_cell = GRUCell(2 * d_emb if human_concat else d_emb, hidden, rng, dtype)
        self.human_classify = Linear(hidden, n_subactivities, rng, dtype)
        self.object_classify = Linear(hidden, n_affordances, rng, dtype)
        self._hidden = hidden

    def initial_state(self, dtype) -> "SegmentState":
        return SegmentState(zeros_state((1,), self._hidden, dtype), {})

    def step(self, state: "SegmentState", a_phi: Tensor, a_theta: Tensor,
             object_ids: list[int]) -> tuple[Tensor, Tensor | None]:
        """Advance one segment; returns human logits (10,) and object logits (N, 12).

        Objects keep their own recurrent state keyed by id; an object absent
        from a segment carries its state unchanged.
        """
        state.human = self.human_cell(a_phi.reshape(1, a_phi.shape[-1]), state.human)
        h_logits = self.human_classify(state.human)[0]
        if not object_ids:
            return h_logits, None
        prev = stack([state.objects.get(oid, state.zero_object(self._hidden, a_phi.dtype))
                      for oid in object_ids], axis=0)
        x = a_theta
        if self.human_concat:
            x = concat([stack([a_phi] * len(object_ids), axis=0), a_theta], axis=-1)
        new = self.object_cell(x, prev)
        for i, oid in enumerate(object_ids):
            state.objects[oid] = new[i]
        return h_logits, self.object_classify(new)


class SegmentState:
    def __init__(self, human: Tensor, objects: dict[int, Tensor]):
        self.human = human
        self.objects = objects

    @staticmethod
    def zero_object(hidden: int, dtype) -> Tensor:
        return Tensor(np.zeros(hidden, dtype=dtype))
