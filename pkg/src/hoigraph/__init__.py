"""Hierarchical graph + recurrent model for human-object interaction detection."""
from .data import (
    DatasetManifest,
    SegmentSample,
    VideoSequence,
    build_model_input,
    load_manifest,
    sample_frames,
    write_dataset,
)
from .model import HOIModel, ModelConfig, classify_segments
from .tensor import Tensor
from .training import Checkpoint, TrainConfig, evaluate, train_stage1, train_stage2

__all__ = [
    "Checkpoint",
    "DatasetManifest",
    "HOIModel",
    "ModelConfig",
    "SegmentSample",
    "Tensor",
    "TrainConfig",
    "VideoSequence",
    "build_model_input",
    "classify_segments",
    "evaluate",
    "load_manifest",
    "sample_frames",
    "train_stage1",
    "train_stage2",
    "write_dataset",
]
