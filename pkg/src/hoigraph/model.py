"""The full hierarchical model: spatial GCN -> frame RNN -> attention -> segment RNN."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from .data import BOX_DIM, MAX_NODES, NUM_AFFORDANCES, NUM_SUBACTIVITIES, SegmentSample, \
    VideoSequence, build_model_input
from .frame import FrameTemporalSubnet, aggregate_frame_scores
from .nn import Module, ParamStore
from .segment import AttentionPool, SegmentHead
from .spatial import SpatialSubnet
from .tensor import Tensor, as_tensor, softmax

ABLATIONS = ("vanilla-gcn", "no-adaptive", "no-residual", "mlp-frame", "no-human-concat",
             "last-frame-pool", "no-seg-rnn")


@dataclass
class ModelConfig:
    d_in: int = 2048
    frames: int = 20
    gcn_widths: tuple[int, ...] = (512, 512)
    adjacency_embed: int = 64
    hidden: int = 512
    d_emb: int = 512
    attention_hidden: int = 128
    segment_hidden: int = 512
    max_nodes: int = MAX_NODES
    dtype: str = "float64"
    ablations: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        self.gcn_widths = tuple(self.gcn_widths)
        self.ablations = tuple(sorted(set(self.ablations)))
        unknown = set(self.ablations) - set(ABLATIONS)
        if unknown:
            raise ValueError(f"unknown ablation(s): {', '.join(sorted(unknown))}")
        if self.gcn_widths and self.gcn_widths[-1] != self.d_emb:
            raise ValueError("last GCN width must equal d_emb")
        if self.frames < 1:
            raise ValueError("frames must be >= 1")

    def has(self, name: str) -> bool:
        return name in self.ablations

    @property
    def np_dtype(self):
        return np.dtype(self.dtype).type

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gcn_widths"] = list(self.gcn_widths)
        d["ablations"] = list(self.ablations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()
                      if k in names})

    @classmethod
    def micro(cls, **kw) -> "ModelConfig":
        """Tiny configuration used by gradient checks."""
        base = dict(d_in=8, frames=3, gcn_widths=(16, 16), adjacency_embed=4, hidden=16,
                    d_emb=16, attention_hidden=8, segment_hidden=16)
        base.update(kw)
        return cls(**base)

    @classmethod
    def desk(cls, d_in: int = 32, **kw) -> "ModelConfig":
        """Reduced widths for single-core experiments on synthetic data."""
        base = dict(d_in=d_in, frames=20, gcn_widths=(64, 64), adjacency_embed=16, hidden=64,
                    d_emb=64, attention_hidden=32, segment_hidden=64)
        base.update(kw)
        return cls(**base)


@dataclass
class FrameOutput:
    human_logits: Tensor  # (T, 10)
    object_logits: Tensor | None  # (N, T, 12)
    human_emb: Tensor  # (T, D_emb)
    object_emb: Tensor | None  # (N, T, D_emb)

    def human_scores(self) -> Tensor:
        return self.human_logits.sum(axis=0)

    def object_scores(self) -> Tensor | None:
        return None if self.object_logits is None else self.object_logits.sum(axis=1)


@dataclass
class SegmentOutput:
    frame: FrameOutput
    human_logits: Tensor | None  # (10,) from the segment head
    object_logits: Tensor | None  # (N, 12)
    object_ids: list[int]
    attention: np.ndarray | None = None


class HOIModel(Module):
    def __init__(self, config: ModelConfig, seed: int = 0):
        self._config = config
        rng = np.random.default_rng(seed)
        dt = config.np_dtype
        vanilla = config.has("vanilla-gcn")
        self.spatial = SpatialSubnet(
            config.d_in + BOX_DIM, config.gcn_widths, config.adjacency_embed, config.max_nodes,
            rng, dt, learned_adjacency=not vanilla,
            data_adjacency=not (vanilla or config.has("no-adaptive")),
            residual=not config.has("no-residual"))
        self.frame = FrameTemporalSubnet(config.d_emb, config.hidden, config.frames, rng, dt,
                                         NUM_SUBACTIVITIES, NUM_AFFORDANCES,
                                         mlp=config.has("mlp-frame"),
                                         human_concat=not config.has("no-human-concat"))
        if config.has("no-seg-rnn"):
            self.human_pool = self.object_pool = self.segment = None
        else:
            last = config.has("last-frame-pool")
            self.human_pool = AttentionPool(config.d_emb, config.attention_hidden, rng, dt, last)
            self.object_pool = AttentionPool(config.d_emb, config.attention_hidden, rng, dt, last)
            self.segment = SegmentHead(config.d_emb, config.segment_hidden, rng, dt,
                                       NUM_SUBACTIVITIES, NUM_AFFORDANCES,
                                       human_concat=not config.has("no-human-concat"))

    @property
    def config(self) -> ModelConfig:
        return self._config

    @property
    def has_segment_head(self) -> bool:
        return self.segment is not None

    def stage_parameters(self, stage: int) -> ParamStore:
        """Stage 1 trains spatial + frame subnets; stage 2 trains everything."""
        if stage == 1:
            return ParamStore(list(self.spatial.named_parameters("spatial."))
                              + list(self.frame.named_parameters("frame.")))
        return self.parameters()

    # forward ---------------------------------------------------------------------
    def model_input(self, sample: SegmentSample) -> np.ndarray:
        return build_model_input(sample, self._config.frames, self._config.np_dtype)

    def frame_forward(self, x) -> FrameOutput:
        """x: (T, N+1, D_in+4) -> frame-level logits and embeddings."""
        emb = self.spatial(as_tensor(x))
        phi = emb[:, 0]
        h_logits, h_emb = self.frame.human_frame_pass(phi)
        if emb.shape[1] == 1:
            return FrameOutput(h_logits, None, h_emb, None)
        theta = emb[:, 1:].swapaxes(0, 1)
        o_logits, o_emb = self.frame.object_frame_pass(phi, theta)
        return FrameOutput(h_logits, o_logits, h_emb, o_emb)

    def forward_video(self, inputs: Sequence, object_ids: Sequence[Sequence[int]]
                      ) -> list[SegmentOutput]:
        """Run every segment of one video in order; segment head sees only the past."""
        if len(inputs) == 0:
            raise ValueError("empty video")
        outs = []
        state = self.segment.initial_state(self._config.np_dtype) if self.segment else None
        for x, oids in zip(inputs, object_ids):
            fo = self.frame_forward(x)
            if self.segment is None:
                outs.append(SegmentOutput(fo, None, None, list(oids)))
                continue
            a_phi, weights = self.human_pool(fo.human_emb.reshape((1,) + fo.human_emb.shape))
            a_theta = self.object_pool(fo.object_emb)[0] if fo.object_emb is not None else None
            h_logits, o_logits = self.segment.step(state, a_phi[0], a_theta, list(oids))
            outs.append(SegmentOutput(fo, h_logits, o_logits, list(oids), weights[0]))
        return outs

    def video_inputs(self, video: VideoSequence) -> tuple[list[np.ndarray], list[list[int]]]:
        return ([self.model_input(s) for s in video.segments],
                [list(s.object_ids) for s in video.segments])


def classify_segments(video: VideoSequence, model: HOIModel, stage: int | None = None
                      ) -> list[tuple[np.ndarray, np.ndarray | None]]:
    """Per-segment (H_m over 10 classes, O_{n,m} over 12 classes per object) distributions.

    Stage 2 models report the segment head; stage 1 (or no segment head)
    reports the aggregated frame scores.
    """
    if len(video.segments) == 0:
        raise ValueError("empty video")
    use_segment = model.has_segment_head and stage != 1
    outs = model.forward_video(*model.video_inputs(video))
    result = []
    for o in outs:
        if use_segment:
            h = softmax(o.human_logits).data
            obj = softmax(o.object_logits).data if o.object_logits is not None else None
        else:
            h = aggregate_frame_scores(o.frame.human_logits).data
            obj = (aggregate_frame_scores(o.frame.object_logits).data
                   if o.frame.object_logits is not None else None)
        result.append((h, obj))
    return result


def with_frames(config: ModelConfig, frames: int) -> ModelConfig:
    return replace(config, frames=frames)
