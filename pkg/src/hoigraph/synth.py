"""Synthetic HOI videos with a known generative model.

Each segment draws a subactivity class (i.i.d. from the mixing weights, or
from a first-order Markov chain when ``markov=True``); each present object
draws an affordance from a fixed class-conditional table. Node features are a
role-specific unit-norm class mean, plus a linear temporal ramp along a
direction tied to the subactivity, plus Gaussian noise.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (
    MAX_NODES,
    NUM_AFFORDANCES,
    NUM_SUBACTIVITIES,
    DatasetManifest,
    SegmentSample,
    SynthParameterError,
    VideoSequence,
    dump_json,
    write_dataset,
)

DRAW_LOG = "draws.json"
MARKOV_STAY_ON_SUCCESSOR = 0.9
RAMP_SCALE = 0.5


def affordance_table() -> np.ndarray:
    """Fixed P(affordance | subactivity), 10 x 12."""
    table = np.full((NUM_SUBACTIVITIES, NUM_AFFORDANCES), 0.1 / (NUM_AFFORDANCES - 2))
    for c in range(NUM_SUBACTIVITIES):
        primary = c
        secondary = NUM_AFFORDANCES - 1 if c % 2 == 0 else NUM_AFFORDANCES - 2
        table[c, primary] = 0.6
        table[c, secondary] = 0.3
    return table


def separated_unit_vectors(rng: np.random.Generator, count: int, dim: int,
                           min_dist: float = 0.6) -> np.ndarray:
    if dim >= count:
        q, _ = np.linalg.qr(rng.standard_normal((dim, count)))
        return q.T.copy()
    for _ in range(1000):
        v = rng.standard_normal((count, dim))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        d = np.linalg.norm(v[:, None] - v[None], axis=-1) + 10 * np.eye(count)
        if d.min() >= min_dist:
            return v
    raise SynthParameterError(f"cannot separate {count} unit vectors in {dim} dims")


@dataclass
class SynthSpec:
    seed: int = 0
    n_videos: int = 50
    segments_per_video: int = 5
    objects_range: tuple[int, int] = (1, 3)
    d_in: int = 32
    sigma: float = 0.1
    frames_range: tuple[int, int] = (20, 40)
    n_test_videos: int = 10
    markov: bool = False

    def validate(self) -> None:
        lo, hi = self.objects_range
        if self.d_in < 8:
            raise SynthParameterError("d_in must be >= 8")
        if self.n_videos < 1 or self.segments_per_video < 1:
            raise SynthParameterError("need at least one video and one segment")
        if not 0 <= lo <= hi <= MAX_NODES - 1:
            raise SynthParameterError(f"objects_range must satisfy 0 <= lo <= hi <= {MAX_NODES - 1}")
        if not 1 <= self.frames_range[0] <= self.frames_range[1]:
            raise SynthParameterError("frames_range must satisfy 1 <= lo <= hi")
        if not 0 <= self.n_test_videos <= self.n_videos:
            raise SynthParameterError("n_test_videos outside [0, n_videos]")
        if self.sigma < 0:
            raise SynthParameterError("sigma must be >= 0")


def _random_box(rng: np.random.Generator) -> np.ndarray:
    w, h = rng.uniform(0.1, 0.4, size=2)
    x1, y1 = rng.uniform(0.0, 1.0 - w), rng.uniform(0.0, 1.0 - h)
    return np.array([x1, y1, x1 + w, y1 + h])


def generate_videos(spec: SynthSpec) -> tuple[list[VideoSequence], dict]:
    """Build videos in memory; returns them with the generator's draw log."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    d = spec.d_in
    human_means = separated_unit_vectors(rng, NUM_SUBACTIVITIES, d)
    object_means = separated_unit_vectors(rng, NUM_AFFORDANCES, d)
    ramps = separated_unit_vectors(rng, NUM_SUBACTIVITIES, d)
    mixing = np.full(NUM_SUBACTIVITIES, 1.0 / NUM_SUBACTIVITIES)
    # one cycle through all classes, so no class succeeds itself
    order = rng.permutation(NUM_SUBACTIVITIES)
    successor = np.empty(NUM_SUBACTIVITIES, dtype=int)
    successor[order] = np.roll(order, -1)
    transition = np.full((NUM_SUBACTIVITIES, NUM_SUBACTIVITIES),
                         (1.0 - MARKOV_STAY_ON_SUCCESSOR) / (NUM_SUBACTIVITIES - 1))
    transition[np.arange(NUM_SUBACTIVITIES), successor] = MARKOV_STAY_ON_SUCCESSOR
    table = affordance_table()

    test_ids = set(rng.choice(spec.n_videos, size=spec.n_test_videos, replace=False).tolist())
    videos, draws = [], []
    for vi in range(spec.n_videos):
        vid = f"v{vi:04d}"
        n_obj = int(rng.integers(spec.objects_range[0], spec.objects_range[1] + 1))
        home = [_random_box(rng) for _ in range(n_obj + 1)]
        segments, prev = [], None
        for m in range(spec.segments_per_video):
            if spec.markov and prev is not None:
                c = int(rng.choice(NUM_SUBACTIVITIES, p=transition[prev]))
            else:
                c = int(rng.choice(NUM_SUBACTIVITIES, p=mixing))
            prev = c
            present = [o for o in range(1, n_obj + 1) if rng.random() < 0.75]
            if n_obj and not present:
                present = [int(rng.integers(1, n_obj + 1))]
            affs = [int(rng.choice(NUM_AFFORDANCES, p=table[c])) for _ in present]
            frames = int(rng.integers(spec.frames_range[0], spec.frames_range[1] + 1))
            nodes = 1 + len(present)
            ramp_t = (np.arange(frames) / max(frames - 1, 1) - 0.5) * RAMP_SCALE
            means = np.stack([human_means[c]] + [object_means[a] for a in affs])
            feats = (means[None] + ramp_t[:, None, None] * ramps[c][None, None]
                     + spec.sigma * rng.standard_normal((frames, nodes, d)))
            node_home = np.stack([home[0]] + [home[o] for o in present])
            jitter = rng.uniform(-0.02, 0.02, size=(frames, nodes, 1))
            boxes = np.clip(node_home[None] + jitter, 0.0, 1.0)
            segments.append(SegmentSample(vid, m, feats.astype(np.float32),
                                          boxes.astype(np.float32), c, affs, present))
            draws.append({"video_id": vid, "segment": m, "subactivity": c, "affordances": affs})
        videos.append(VideoSequence(vid, segments, "test" if vi in test_ids else "train"))
    log = {
        "spec": {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(spec).items()},
        "mixing_weights": mixing.tolist(),
        "transition": transition.tolist() if spec.markov else None,
        "affordance_table": table.tolist(),
        "human_means": human_means.tolist(),
        "object_means": object_means.tolist(),
        "draws": draws,
    }
    return videos, log


def synth_generate(out_dir: str | os.PathLike, spec: SynthSpec | None = None,
                   **overrides) -> DatasetManifest:
    """Write a synthetic dataset (manifest, blobs, draw log) to ``out_dir``."""
    spec = spec or SynthSpec(**overrides)
    videos, log = generate_videos(spec)
    manifest = write_dataset(out_dir, videos)
    dump_json(log, Path(out_dir) / DRAW_LOG)
    return manifest
