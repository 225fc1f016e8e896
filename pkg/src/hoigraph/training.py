"""Losses, learning-rate schedule, two-stage training, anticipation targets, checkpoints."""
from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import NUM_AFFORDANCES, NUM_SUBACTIVITIES, VideoSequence
from .metrics import EvalReport
from .model import HOIModel, ModelConfig, SegmentOutput
from .nn import ParamStore
from .optim import Adam
from .tensor import ContractError, Tensor, as_tensor, backward, log, log_softmax

CKPT_MAGIC = b"LGTNCKPT"
CKPT_VERSION = 1
TASKS = ("detect", "anticipate")


class CheckpointError(Exception):
    pass


@dataclass
class TrainConfig:
    task: str = "detect"
    seed: int = 0
    lam: float = 2.0
    lr: float = 2e-5
    lr_decay: float = 0.8
    decay_step: int = 10
    epochs: int = 300
    stage2_epochs: int | None = None
    stage2_lr: float | None = None
    frame_loss_weight: float = 1.0
    grad_accum: int = 1

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")
        if self.lam <= 0:
            raise ValueError("lambda must be > 0")
        if self.lr <= 0 or self.lr_decay <= 0 or self.decay_step <= 0 or self.epochs < 0:
            raise ValueError("schedule values must be positive")
        if self.grad_accum < 1:
            raise ValueError("grad_accum must be >= 1")

    @property
    def epochs_stage2(self) -> int:
        return self.epochs if self.stage2_epochs is None else self.stage2_epochs

    def lr_for(self, stage: int, epoch: int) -> float:
        base = self.stage2_lr if stage == 2 and self.stage2_lr is not None else self.lr
        return lr_schedule(epoch, base, self.lr_decay, self.decay_step)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


# losses ------------------------------------------------------------------------------

def _check_targets(y_h: int, y_o: Sequence[int]) -> None:
    if not 0 <= y_h < NUM_SUBACTIVITIES:
        raise ContractError(f"subactivity target {y_h} out of range")
    if any(not 0 <= y < NUM_AFFORDANCES for y in y_o):
        raise ContractError("affordance target out of range")


def total_loss(h_pred, o_preds, y_h: int, y_o: Sequence[int], lam: float = 2.0) -> Tensor:
    """L_h + lam * mean_n L_o from post-softmax distributions."""
    _check_targets(y_h, y_o)
    h_pred = as_tensor(h_pred)
    loss = -log(h_pred[y_h])
    if len(y_o) == 0:
        return loss
    o_preds = as_tensor(o_preds)
    if o_preds.shape[0] != len(y_o):
        raise ContractError("one affordance target per object prediction")
    picked = o_preds[np.arange(len(y_o)), np.asarray(y_o)]
    return loss + (-log(picked)).mean() * lam


def loss_from_scores(h_scores: Tensor, o_scores: Tensor | None, y_h: int,
                     targets: Sequence[tuple[int, int]], lam: float) -> Tensor:
    """Same value as ``total_loss(softmax(h), softmax(o))`` computed through log-softmax.

    ``targets`` holds (object row, affordance label) pairs; rows not listed are
    ignored (unmatched objects under anticipation).
    """
    labels = [y for _, y in targets]
    _check_targets(y_h, labels)
    loss = -log_softmax(h_scores)[y_h]
    if not targets or o_scores is None:
        return loss
    rows = np.array([r for r, _ in targets])
    logp = log_softmax(o_scores[rows])
    return loss + (-logp[np.arange(len(rows)), np.array(labels)]).mean() * lam


def lr_schedule(epoch: int, lr: float = 2e-5, decay: float = 0.8, step: int = 10) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return lr * decay ** (epoch // step)


# examples ----------------------------------------------------------------------------

@dataclass
class AnticipationPair:
    """Context segments 0..``segment`` predict the labels of ``segment`` + 1."""
    segment: int
    subactivity: int
    targets: list[tuple[int, int]]  # (object row in segment, label from next segment)


def anticipation_shift(video: VideoSequence) -> list[AnticipationPair]:
    pairs = []
    for m in range(len(video.segments) - 1):
        cur, nxt = video.segments[m], video.segments[m + 1]
        nxt_aff = dict(zip(nxt.object_ids, nxt.affordances))
        targets = [(row, nxt_aff[oid]) for row, oid in enumerate(cur.object_ids) if oid in nxt_aff]
        pairs.append(AnticipationPair(m, nxt.subactivity, targets))
    return pairs


def segment_targets(video: VideoSequence, task: str) -> list[tuple[int, list[tuple[int, int]]]]:
    """Per input segment, (subactivity target, [(object row, affordance target)])."""
    if task == "detect":
        return [(s.subactivity, list(enumerate(s.affordances))) for s in video.segments]
    return [(p.subactivity, p.targets) for p in anticipation_shift(video)]


@dataclass
class VideoExample:
    video_id: str
    inputs: list[np.ndarray]
    object_ids: list[list[int]]
    targets: list[tuple[int, list[tuple[int, int]]]]


def build_examples(model: HOIModel, videos: Sequence[VideoSequence], task: str
                   ) -> list[VideoExample]:
    out = []
    for v in videos:
        targets = segment_targets(v, task)
        if not targets:
            continue
        inputs, oids = model.video_inputs(v)
        n = len(targets)
        out.append(VideoExample(v.video_id, inputs[:n], oids[:n], targets))
    return out


# training ------------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: HOIModel
    optimizer: Adam
    stage: int
    epoch: int
    log: list[dict] = field(default_factory=list)
    train_config: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    def checkpoint(self) -> "Checkpoint":
        return Checkpoint.capture(self.model, self.optimizer, self.stage, self.epoch,
                                  self.train_config)


class _Tally:
    def __init__(self):
        self.sub_true, self.sub_pred, self.aff_true, self.aff_pred = [], [], [], []

    def add(self, h_scores: Tensor, o_scores: Tensor | None, y_h: int,
            targets: Sequence[tuple[int, int]]) -> None:
        self.sub_true.append(y_h)
        self.sub_pred.append(int(np.argmax(h_scores.data)))
        if o_scores is not None:
            preds = np.argmax(o_scores.data, axis=-1)
            for row, y in targets:
                self.aff_true.append(y)
                self.aff_pred.append(int(preds[row]))

    def report(self) -> EvalReport:
        return EvalReport.build(self.sub_true, self.sub_pred, self.aff_true, self.aff_pred)


def _run_epochs(model: HOIModel, params: ParamStore, optimizer: Adam, stage: int,
                units: list, step_fn: Callable, cfg: TrainConfig, epochs: int,
                on_epoch: Callable[[dict], None] | None) -> tuple[int, list[dict]]:
    rng = np.random.default_rng([cfg.seed, stage])
    log_lines = []
    params.zero_grad()
    pending = 0
    for epoch in range(epochs):
        lr = cfg.lr_for(stage, epoch)
        tally = _Tally()
        total = 0.0
        for i in rng.permutation(len(units)):
            loss = step_fn(units[i], tally)
            backward(loss)
            total += loss.item()
            pending += 1
            if pending == cfg.grad_accum:
                optimizer.step(lr)
                params.zero_grad()
                pending = 0
        if pending:
            optimizer.step(lr)
            params.zero_grad()
            pending = 0
        rep = tally.report()
        line = {"stage": stage, "epoch": epoch, "lr": lr, "loss": total / max(len(units), 1),
                "train_f1_subactivity": rep.subactivity.macro_f1,
                "train_f1_affordance": rep.affordance.macro_f1}
        log_lines.append(line)
        if on_epoch:
            on_epoch(line)
    return epochs, log_lines


def train_stage1(videos: Sequence[VideoSequence], model_config: ModelConfig,
                 cfg: TrainConfig, on_epoch: Callable[[dict], None] | None = None,
                 model: HOIModel | None = None) -> TrainResult:
    """Train spatial + frame subnets on aggregated frame scores, one segment per step."""
    model = model or HOIModel(model_config, cfg.seed)
    units = [(x, y_h, tg) for ex in build_examples(model, videos, cfg.task)
             for x, (y_h, tg) in zip(ex.inputs, ex.targets)]
    if not units:
        raise ValueError("empty training set")
    params = model.stage_parameters(1)
    optimizer = Adam(params)

    def step(unit, tally: _Tally) -> Tensor:
        x, y_h, targets = unit
        fo = model.frame_forward(x)
        h, o = fo.human_scores(), fo.object_scores()
        tally.add(h, o, y_h, targets)
        return loss_from_scores(h, o, y_h, targets, cfg.lam)

    epoch, log_lines = _run_epochs(model, params, optimizer, 1, units, step, cfg, cfg.epochs,
                                   on_epoch)
    return TrainResult(model, optimizer, 1, epoch, log_lines, cfg, cfg.seed)


def video_loss(model: HOIModel, ex: VideoExample, cfg: TrainConfig,
               tally: _Tally | None = None) -> Tensor:
    """Mean over segments of frame-level loss (weighted) plus segment-level loss."""
    outs: list[SegmentOutput] = model.forward_video(ex.inputs, ex.object_ids)
    terms = []
    for o, (y_h, targets) in zip(outs, ex.targets):
        seg = loss_from_scores(o.human_logits, o.object_logits, y_h, targets, cfg.lam)
        if cfg.frame_loss_weight:
            frame = loss_from_scores(o.frame.human_scores(), o.frame.object_scores(), y_h,
                                     targets, cfg.lam)
            seg = seg + frame * cfg.frame_loss_weight
        terms.append(seg)
        if tally is not None:
            tally.add(o.human_logits, o.object_logits, y_h, targets)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


def train_stage2(videos: Sequence[VideoSequence], stage1: "Checkpoint", cfg: TrainConfig,
                 on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """End-to-end training initialized from a stage-1 checkpoint, one video per step."""
    mc = stage1.model_config
    if mc.has("no-seg-rnn"):
        raise CheckpointError("no-seg-rnn configuration has no stage 2")
    model = HOIModel(mc, cfg.seed)
    stage1.restore_into(model, strict=False)
    units = build_examples(model, videos, cfg.task)
    if not units:
        raise ValueError("empty training set")
    params = model.stage_parameters(2)
    optimizer = Adam(params)
    epoch, log_lines = _run_epochs(model, params, optimizer, 2, units,
                                   lambda ex, tally: video_loss(model, ex, cfg, tally),
                                   cfg, cfg.epochs_stage2, on_epoch)
    return TrainResult(model, optimizer, 2, epoch, log_lines, cfg, cfg.seed)


# evaluation ------------------------------------------------------------------------------

def evaluate(model: HOIModel, videos: Sequence[VideoSequence], stage: int,
             task: str = "detect") -> EvalReport:
    """Stage 1 scores frame-level aggregates; stage 2 scores the segment head."""
    tally = _Tally()
    for ex in build_examples(model, videos, task):
        if stage == 2 and model.has_segment_head:
            for o, (y_h, tg) in zip(model.forward_video(ex.inputs, ex.object_ids), ex.targets):
                tally.add(o.human_logits, o.object_logits, y_h, tg)
        else:
            for x, (y_h, tg) in zip(ex.inputs, ex.targets):
                fo = model.frame_forward(x)
                tally.add(fo.human_scores(), fo.object_scores(), y_h, tg)
    return tally.report()


# checkpoints ------------------------------------------------------------------------------

@dataclass
class Checkpoint:
    stage: int
    model_config: ModelConfig
    train_config: TrainConfig
    epoch: int
    seed: int
    params: dict[str, np.ndarray]
    adam_step: int = 0
    adam_hyper: tuple[float, float, float] = (0.9, 0.999, 1e-8)
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def capture(cls, model: HOIModel, optimizer: Adam | None, stage: int, epoch: int,
                train_config: TrainConfig) -> "Checkpoint":
        f32 = lambda a: np.asarray(a, dtype="<f4").copy()  # noqa: E731
        params = {n: f32(p.data) for n, p in model.stage_parameters(stage).items()}
        if optimizer is None:
            return cls(stage, model.config, train_config, epoch, train_config.seed, params)
        st = optimizer.state
        return cls(stage, model.config, train_config, epoch, train_config.seed, params,
                   st.step, (st.beta1, st.beta2, st.eps),
                   {n: f32(a) for n, a in st.m.items()}, {n: f32(a) for n, a in st.v.items()})

    def restore_into(self, model: HOIModel, strict: bool = True) -> None:
        target = model.parameters()
        missing = [n for n in target if n not in self.params]
        if strict and missing:
            raise CheckpointError(f"checkpoint lacks parameters: {missing[:3]}")
        for name, value in self.params.items():
            if name not in target:
                raise CheckpointError(f"unexpected parameter {name}")
            p = target[name]
            if p.shape != value.shape:
                raise CheckpointError(f"{name}: shape {value.shape} != model {p.shape}")
            p.data[...] = value.astype(p.dtype)

    def build_model(self) -> HOIModel:
        model = HOIModel(self.model_config, self.seed)
        self.restore_into(model, strict=self.stage == 2 or not model.has_segment_head)
        return model

    # serialization ------------------------------------------------------------------------
    def to_bytes(self) -> bytes:
        table, chunks, offset = [], [], 0

        def add(group: str, arrays: dict[str, np.ndarray]) -> None:
            nonlocal offset
            for name, arr in arrays.items():
                raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
                table.append({"group": group, "name": name, "shape": list(arr.shape),
                              "offset": offset, "length": len(raw)})
                chunks.append(raw)
                offset += len(raw)

        add("param", self.params)
        add("adam_m", self.adam_m)
        add("adam_v", self.adam_v)
        header = {
            "format_version": CKPT_VERSION,
            "stage": self.stage,
            "epoch": self.epoch,
            "seed": self.seed,
            "model_config": self.model_config.to_dict(),
            "train_config": self.train_config.to_dict(),
            "optimizer": {"step": self.adam_step, "beta1": self.adam_hyper[0],
                          "beta2": self.adam_hyper[1], "eps": self.adam_hyper[2]},
            "tensors": table,
        }
        text = json.dumps(header, sort_keys=True, indent=1).encode("utf-8")
        return (CKPT_MAGIC + b"\n" + struct.pack("<Q", len(text)) + text + b"\n"
                + b"".join(chunks))

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        if not raw.startswith(CKPT_MAGIC + b"\n"):
            raise CheckpointError("not a checkpoint file")
        pos = len(CKPT_MAGIC) + 1
        (n,) = struct.unpack_from("<Q", raw, pos)
        pos += 8
        header = json.loads(raw[pos:pos + n].decode("utf-8"))
        pos += n + 1
        if header.get("format_version") != CKPT_VERSION:
            raise CheckpointError(f"checkpoint version {header.get('format_version')!r}")
        data = raw[pos:]
        groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}}
        for t in header["tensors"]:
            lo, hi = t["offset"], t["offset"] + t["length"]
            if hi > len(data):
                raise CheckpointError(f"tensor {t['name']} runs past end of file")
            arr = np.frombuffer(data[lo:hi], dtype="<f4").reshape(t["shape"]).copy()
            groups[t["group"]][t["name"]] = arr
        opt = header["optimizer"]
        return cls(header["stage"], ModelConfig.from_dict(header["model_config"]),
                   TrainConfig.from_dict(header["train_config"]), header["epoch"], header["seed"],
                   groups["param"], opt["step"], (opt["beta1"], opt["beta2"], opt["eps"]),
                   groups["adam_m"], groups["adam_v"])

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Checkpoint":
        p = Path(path)
        if not p.is_file():
            raise CheckpointError(f"checkpoint not found: {p}")
        return cls.from_bytes(p.read_bytes())

