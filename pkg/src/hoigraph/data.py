"""On-disk dataset of precomputed per-node features.

Layout of a dataset directory::

    manifest.json   # format version, D_in, class counts, videos, splits, blob refs
    features.bin    # LGTN blob file: every segment's F x (N+1) x D_in block
    boxes.bin       # LGTN blob file: every segment's F x (N+1) x 4 block

Blob files start with a 20-byte header (magic ``LGTN``, u32 version, u32 dtype
code, u64 element count, all little-endian) followed by raw little-endian
float32 values. Segment references carry a byte offset and byte length into
those files. Node 0 of every segment is the human.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

FORMAT_VERSION = 1
MAGIC = b"LGTN"
DTYPE_F32 = 1
HEADER = struct.Struct("<4sIIQ")
NUM_SUBACTIVITIES = 10
NUM_AFFORDANCES = 12
MAX_NODES = 7
BOX_DIM = 4


class DatasetError(Exception):
    pass


class ManifestNotFoundError(DatasetError):
    pass


class ManifestVersionError(DatasetError):
    pass


class DanglingReferenceError(DatasetError):
    pass


class InconsistentDimensionError(DatasetError):
    pass


class SampleValidationError(DatasetError):
    pass


class EmptySegmentError(DatasetError):
    pass


class SynthParameterError(DatasetError):
    pass


@dataclass
class SegmentSample:
    video_id: str
    index: int
    features: np.ndarray  # F x (N+1) x D_in
    boxes: np.ndarray  # F x (N+1) x 4, normalized x1, y1, x2, y2
    subactivity: int
    affordances: list[int]
    object_ids: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.object_ids:
            self.object_ids = list(range(1, self.num_nodes))
        self.validate()

    @property
    def frame_count(self) -> int:
        return self.features.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.features.shape[1]

    @property
    def num_objects(self) -> int:
        return self.num_nodes - 1

    @property
    def d_in(self) -> int:
        return self.features.shape[2]

    def validate(self) -> None:
        f = self.features
        where = f"{self.video_id}[{self.index}]"
        if f.ndim != 3:
            raise SampleValidationError(f"{where}: features must be F x nodes x D")
        if f.shape[0] == 0:
            raise EmptySegmentError(f"{where}: segment has no frames")
        if not 1 <= f.shape[1] <= MAX_NODES:
            raise SampleValidationError(f"{where}: node count {f.shape[1]} outside [1, {MAX_NODES}]")
        if self.boxes.shape != f.shape[:2] + (BOX_DIM,):
            raise SampleValidationError(f"{where}: boxes shape {self.boxes.shape} does not match")
        b = self.boxes
        if np.any(b < 0) or np.any(b > 1):
            raise SampleValidationError(f"{where}: box coordinates outside [0, 1]")
        if np.any(b[..., 0] > b[..., 2]) or np.any(b[..., 1] > b[..., 3]):
            raise SampleValidationError(f"{where}: box corners out of order")
        if not 0 <= self.subactivity < NUM_SUBACTIVITIES:
            raise SampleValidationError(f"{where}: subactivity {self.subactivity} out of range")
        if len(self.affordances) != self.num_objects:
            raise SampleValidationError(f"{where}: need one affordance per object")
        if any(not 0 <= a < NUM_AFFORDANCES for a in self.affordances):
            raise SampleValidationError(f"{where}: affordance label out of range")
        if len(self.object_ids) != self.num_objects or len(set(self.object_ids)) != self.num_objects:
            raise SampleValidationError(f"{where}: object ids must be unique, one per object")


@dataclass
class VideoSequence:
    video_id: str
    segments: list[SegmentSample]
    split: str = "train"

    def __post_init__(self):
        if [s.index for s in self.segments] != list(range(len(self.segments))):
            raise SampleValidationError(f"{self.video_id}: segment indices must be 0..M-1")

    def __len__(self) -> int:
        return len(self.segments)


@dataclass(frozen=True)
class BlobRef:
    path: str
    offset: int
    length: int

    def to_json(self) -> dict:
        return {"path": self.path, "offset": self.offset, "length": self.length}


@dataclass
class SegmentEntry:
    index: int
    frames: int
    nodes: int
    subactivity: int
    affordances: list[int]
    object_ids: list[int]
    features: BlobRef
    boxes: BlobRef


@dataclass
class VideoEntry:
    video_id: str
    split: str
    segments: list[SegmentEntry]


@dataclass
class DatasetManifest:
    root: Path
    version: int
    d_in: int
    num_subactivities: int
    num_affordances: int
    videos: list[VideoEntry]

    def splits(self) -> list[str]:
        return sorted({v.split for v in self.videos})

    def entries(self, split: str | None = None) -> list[VideoEntry]:
        return [v for v in self.videos if split is None or v.split == split]

    def load_video(self, entry: VideoEntry) -> VideoSequence:
        segments = []
        for s in entry.segments:
            feats = read_blob(self.root, s.features).reshape(s.frames, s.nodes, self.d_in)
            boxes = read_blob(self.root, s.boxes).reshape(s.frames, s.nodes, BOX_DIM)
            segments.append(SegmentSample(entry.video_id, s.index, feats, boxes, s.subactivity,
                                          list(s.affordances), list(s.object_ids)))
        return VideoSequence(entry.video_id, segments, entry.split)

    def videos_for(self, split: str | None = None) -> list[VideoSequence]:
        return [self.load_video(v) for v in self.entries(split)]


# blob files -------------------------------------------------------------------

def read_blob_header(path: Path) -> tuple[int, int, int]:
    with open(path, "rb") as fh:
        raw = fh.read(HEADER.size)
    if len(raw) != HEADER.size:
        raise DanglingReferenceError(f"{path}: truncated header")
    magic, version, dtype, count = HEADER.unpack(raw)
    if magic != MAGIC:
        raise DatasetError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ManifestVersionError(f"{path}: blob version {version}, expected {FORMAT_VERSION}")
    if dtype != DTYPE_F32:
        raise DatasetError(f"{path}: unsupported dtype code {dtype}")
    return version, dtype, count


def read_blob(root: Path, ref: BlobRef) -> np.ndarray:
    """Read exactly ``ref.length`` bytes at ``ref.offset``."""
    with open(Path(root) / ref.path, "rb") as fh:
        fh.seek(ref.offset)
        raw = fh.read(ref.length)
    if len(raw) != ref.length:
        raise DanglingReferenceError(f"{ref.path}: short read at {ref.offset}")
    return np.frombuffer(raw, dtype="<f4").copy()


class BlobWriter:
    def __init__(self, root: Path, name: str):
        self.name = name
        self.path = Path(root) / name
        self._chunks: list[bytes] = []
        self._offset = HEADER.size
        self._count = 0

    def append(self, values: np.ndarray) -> BlobRef:
        raw = np.ascontiguousarray(values, dtype="<f4").tobytes()
        ref = BlobRef(self.name, self._offset, len(raw))
        self._chunks.append(raw)
        self._offset += len(raw)
        self._count += len(raw) // 4
        return ref

    def close(self) -> None:
        with open(self.path, "wb") as fh:
            fh.write(HEADER.pack(MAGIC, FORMAT_VERSION, DTYPE_F32, self._count))
            for c in self._chunks:
                fh.write(c)


# manifest ----------------------------------------------------------------------

def _manifest_json(d_in: int, videos: Sequence[VideoEntry]) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "d_in": d_in,
        "num_subactivities": NUM_SUBACTIVITIES,
        "num_affordances": NUM_AFFORDANCES,
        "videos": [
            {
                "video_id": v.video_id,
                "split": v.split,
                "segments": [
                    {
                        "index": s.index,
                        "d_in": d_in,
                        "frames": s.frames,
                        "nodes": s.nodes,
                        "subactivity": s.subactivity,
                        "affordances": list(s.affordances),
                        "object_ids": list(s.object_ids),
                        "features": s.features.to_json(),
                        "boxes": s.boxes.to_json(),
                    }
                    for s in v.segments
                ],
            }
            for v in videos
        ],
    }


def dump_json(obj, path: Path) -> None:
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def write_dataset(root: str | os.PathLike, videos: Sequence[VideoSequence]) -> DatasetManifest:
    """Write videos as manifest + blob files and return the reloaded manifest."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    if not videos:
        raise DatasetError("no videos to write")
    d_in = videos[0].segments[0].d_in
    feats = BlobWriter(root, "features.bin")
    boxes = BlobWriter(root, "boxes.bin")
    entries = []
    for v in videos:
        segs = []
        for s in v.segments:
            if s.d_in != d_in:
                raise InconsistentDimensionError(f"{v.video_id}[{s.index}]: D_in {s.d_in} != {d_in}")
            segs.append(SegmentEntry(s.index, s.frame_count, s.num_nodes, s.subactivity,
                                     list(s.affordances), list(s.object_ids),
                                     feats.append(s.features), boxes.append(s.boxes)))
        entries.append(VideoEntry(v.video_id, v.split, segs))
    feats.close()
    boxes.close()
    dump_json(_manifest_json(d_in, entries), root / "manifest.json")
    return load_manifest(root / "manifest.json")


def _ref(raw: dict) -> BlobRef:
    return BlobRef(str(raw["path"]), int(raw["offset"]), int(raw["length"]))


def load_manifest(path: str | os.PathLike) -> DatasetManifest:
    """Load and eagerly validate a manifest (a file or a dataset directory)."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.is_file():
        raise ManifestNotFoundError(f"manifest not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: not valid JSON ({exc})") from exc
    if raw.get("format_version") != FORMAT_VERSION:
        raise ManifestVersionError(
            f"{path}: format_version {raw.get('format_version')!r}, expected {FORMAT_VERSION}")
    root = path.parent
    d_in = int(raw["d_in"])
    if (raw.get("num_subactivities"), raw.get("num_affordances")) != (NUM_SUBACTIVITIES,
                                                                     NUM_AFFORDANCES):
        raise DatasetError(f"{path}: class counts must be {NUM_SUBACTIVITIES}/{NUM_AFFORDANCES}")
    sizes: dict[str, int] = {}

    def check(ref: BlobRef, units: int, width: int, where: str) -> None:
        if ref.path not in sizes:
            fp = root / ref.path
            if not fp.is_file():
                raise DanglingReferenceError(f"{where}: missing blob file {ref.path}")
            read_blob_header(fp)
            sizes[ref.path] = fp.stat().st_size
        if ref.offset < HEADER.size or ref.offset + ref.length > sizes[ref.path]:
            raise DanglingReferenceError(f"{where}: byte range outside {ref.path}")
        if ref.length != 4 * units * width:
            if ref.length % (4 * units) == 0:
                raise InconsistentDimensionError(
                    f"{where}: blob width {ref.length // (4 * units)}, expected {width}")
            raise DanglingReferenceError(f"{where}: blob length {ref.length} invalid")

    videos = []
    seen = set()
    for v in raw["videos"]:
        vid = str(v["video_id"])
        if vid in seen:
            raise DatasetError(f"duplicate video id {vid}")
        seen.add(vid)
        segs = []
        for i, s in enumerate(v["segments"]):
            where = f"{vid}[{i}]"
            if int(s["index"]) != i:
                raise DatasetError(f"{where}: segment indices must be 0..M-1")
            frames, nodes = int(s["frames"]), int(s["nodes"])
            if frames < 1:
                raise EmptySegmentError(f"{where}: no frames")
            if not 1 <= nodes <= MAX_NODES:
                raise DatasetError(f"{where}: node count {nodes} outside [1, {MAX_NODES}]")
            fref, bref = _ref(s["features"]), _ref(s["boxes"])
            if "d_in" in s and int(s["d_in"]) != d_in:
                raise InconsistentDimensionError(f"{where}: d_in {s['d_in']} != {d_in}")
            check(fref, frames * nodes, d_in, where)
            check(bref, frames * nodes, BOX_DIM, where)
            affs = [int(a) for a in s["affordances"]]
            oids = [int(o) for o in s.get("object_ids", range(1, nodes))]
            if len(affs) != nodes - 1 or len(oids) != nodes - 1:
                raise DatasetError(f"{where}: need one affordance and id per object")
            if not 0 <= int(s["subactivity"]) < NUM_SUBACTIVITIES or any(
                    not 0 <= a < NUM_AFFORDANCES for a in affs):
                raise DatasetError(f"{where}: label out of range")
            segs.append(SegmentEntry(i, frames, nodes, int(s["subactivity"]), affs, oids,
                                     fref, bref))
        videos.append(VideoEntry(vid, str(v.get("split", "train")), segs))
    return DatasetManifest(root, FORMAT_VERSION, d_in, NUM_SUBACTIVITIES, NUM_AFFORDANCES, videos)


# model input -------------------------------------------------------------------

def sample_frames(frame_count: int, target: int) -> list[int]:
    """Uniformly spaced frame indices floor((k + 0.5) * F / T), k = 0..T-1."""
    if frame_count < 1:
        raise EmptySegmentError("cannot sample frames from an empty segment")
    if target < 1:
        raise ValueError("target frame count must be >= 1")
    return [((2 * k + 1) * frame_count) // (2 * target) for k in range(target)]


def build_model_input(sample: SegmentSample, frames: int, dtype=np.float64) -> np.ndarray:
    """T x (N+1) x (D_in + 4): sampled features with normalized boxes appended."""
    idx = sample_frames(sample.frame_count, frames)
    return np.concatenate([sample.features[idx], sample.boxes[idx]], axis=-1).astype(dtype)


# CAD-120-style conversion ----------------------------------------------------------

def convert_annotations(records: Sequence[dict], out_dir: str | os.PathLike) -> DatasetManifest:
    """Convert externally extracted per-node features plus pixel boxes.

    Each record is ``{"video_id", "split", "image_size": (W, H), "segments": [...]}``
    and each segment ``{"features": F x (N+1) x D array (human first),
    "boxes_px": F x (N+1) x 4 array of x1, y1, x2, y2 pixels,
    "subactivity": int, "affordances": [int]*N, "object_ids": [int]*N}``.
    For CAD-120, features come from a backbone run over the RoI crops of each
    annotated frame, subactivity/affordance ids index the 10/12 label lists,
    and object ids are the per-video object numbers of the annotation files.
    """
    videos = []
    for rec in records:
        w, h = rec["image_size"]
        scale = np.array([w, h, w, h], dtype=np.float64)
        segs = []
        for i, s in enumerate(rec["segments"]):
            boxes = np.clip(np.asarray(s["boxes_px"], dtype=np.float64) / scale, 0.0, 1.0)
            segs.append(SegmentSample(rec["video_id"], i, np.asarray(s["features"], np.float32),
                                      boxes.astype(np.float32), int(s["subactivity"]),
                                      [int(a) for a in s["affordances"]],
                                      [int(o) for o in s.get("object_ids", [])]))
        videos.append(VideoSequence(rec["video_id"], segs, rec.get("split", "train")))
    return write_dataset(out_dir, videos)


def iter_segments(videos: Sequence[VideoSequence]) -> Iterator[SegmentSample]:
    for v in videos:
        yield from v.segments
