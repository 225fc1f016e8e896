"""Command-line entry point: ``hoigraph {synth,train,eval,gradcheck}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 check failure.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .data import DatasetError, load_manifest
from .gradcheck import grad_check
from .model import ABLATIONS, HOIModel, ModelConfig
from .synth import SynthSpec, synth_generate
from .tensor import inject_backward_fault
from .training import (
    Checkpoint,
    CheckpointError,
    TrainConfig,
    build_examples,
    evaluate,
    train_stage1,
    train_stage2,
    video_loss,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3

PRESETS = {
    "full": ({}, {}),
    "desk": ({"gcn_widths": [64, 64], "adjacency_embed": 16, "hidden": 64, "d_emb": 64,
              "attention_hidden": 32, "segment_hidden": 64},
             {"lr": 1e-3, "epochs": 8, "stage2_epochs": 20, "stage2_lr": 3e-4}),
    "micro": ({"frames": 3, "gcn_widths": [16, 16], "adjacency_embed": 4, "hidden": 16,
               "d_emb": 16, "attention_hidden": 8, "segment_hidden": 16},
              {"lr": 1e-3, "epochs": 2, "stage2_epochs": 2}),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _pair(text: str) -> tuple[int, int]:
    lo, _, hi = text.partition(",")
    return int(lo), int(hi or lo)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hoigraph", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--videos", type=int, default=50)
    s.add_argument("--segments", type=int, default=5)
    s.add_argument("--objects", type=_pair, default=(1, 3), help="LO,HI objects per video")
    s.add_argument("--d-in", type=int, default=32)
    s.add_argument("--sigma", type=float, default=0.1)
    s.add_argument("--frames-range", type=_pair, default=(20, 40))
    s.add_argument("--test-videos", type=int, default=10)
    s.add_argument("--markov", action="store_true", help="first-order Markov segment classes")

    t = sub.add_parser("train", help="two-stage training")
    t.add_argument("--manifest", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="JSON file of model/training keys; flags override it")
    t.add_argument("--preset", choices=sorted(PRESETS))
    t.add_argument("--task", choices=["detect", "anticipate"])
    t.add_argument("--mode", choices=["video", "image"])
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--stage2-epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--stage2-lr", type=float)
    t.add_argument("--lambda", dest="lam", type=float)
    t.add_argument("--ablation", help=f"comma list of: {', '.join(ABLATIONS)}")
    t.add_argument("--frames", type=int)
    t.add_argument("--dtype", choices=["float64", "float32"])
    t.add_argument("--split", default="train")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--out")
    e.add_argument("--task", choices=["detect", "anticipate"])
    e.add_argument("--mode", choices=["video", "image"])

    g = sub.add_parser("gradcheck", help="finite-difference check of the micro model")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tolerance", type=float, default=1e-4)
    g.add_argument("--max-elements", type=int, default=48,
                   help="entries sampled per parameter; 0 checks every entry")
    g.add_argument("--inject-bug", action="store_true", help="corrupt the tanh backward rule")
    return p


# config resolution ------------------------------------------------------------------

def resolve_configs(args, d_in: int) -> tuple[ModelConfig, TrainConfig, dict]:
    file_cfg = {}
    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    preset = args.preset or file_cfg.get("preset", "full")
    model_kw, train_kw = (dict(d) for d in PRESETS[preset])
    model_names = {f.name for f in fields(ModelConfig)}
    train_names = {f.name for f in fields(TrainConfig)}
    for k, v in file_cfg.items():
        if k in model_names:
            model_kw[k] = v
        elif k in train_names:
            train_kw[k] = v
        elif k not in ("preset", "mode"):
            raise UsageError(f"unknown config key {k!r}")
    flag_train = {"task": args.task, "seed": args.seed, "epochs": args.epochs,
                  "stage2_epochs": args.stage2_epochs, "lr": args.lr,
                  "stage2_lr": args.stage2_lr, "lam": args.lam}
    train_kw.update({k: v for k, v in flag_train.items() if v is not None})
    if args.ablation is not None:
        model_kw["ablations"] = [a for a in args.ablation.split(",") if a]
    if args.frames is not None:
        model_kw["frames"] = args.frames
    if args.dtype:
        model_kw["dtype"] = args.dtype
    mode = args.mode or file_cfg.get("mode", "video")
    if mode == "image":
        if model_kw.get("frames", 1) != 1 and args.frames is not None:
            raise UsageError("image mode requires --frames 1")
        model_kw["frames"] = 1
    model_kw["d_in"] = d_in
    try:
        mc = ModelConfig(**{k: (tuple(v) if isinstance(v, list) else v)
                            for k, v in model_kw.items()})
        tc = TrainConfig(**train_kw)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    return mc, tc, {"preset": preset, "mode": mode}


# commands ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = SynthSpec(seed=args.seed, n_videos=args.videos, segments_per_video=args.segments,
                     objects_range=args.objects, d_in=args.d_in, sigma=args.sigma,
                     frames_range=args.frames_range, n_test_videos=args.test_videos,
                     markov=args.markov)
    t0 = time.perf_counter()
    manifest = synth_generate(args.out, spec)
    n_seg = sum(len(v.segments) for v in manifest.videos)
    print(json.dumps({"out": str(args.out), "videos": len(manifest.videos), "segments": n_seg,
                      "seconds": round(time.perf_counter() - t0, 3)}))
    return EXIT_OK


def cmd_train(args) -> int:
    manifest = load_manifest(args.manifest)
    mc, tc, extra = resolve_configs(args, manifest.d_in)
    videos = manifest.videos_for(args.split)
    if not videos:
        raise DatasetError(f"split {args.split!r} has no videos")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.json").write_text(json.dumps(
        {"model": mc.to_dict(), "train": tc.to_dict(), **extra}, indent=1, sort_keys=True) + "\n",
        encoding="utf-8")
    log_path = out / "train_log.jsonl"
    with open(log_path, "w", encoding="utf-8") as log:
        def emit(line: dict) -> None:
            text = json.dumps(line, sort_keys=True)
            log.write(text + "\n")
            log.flush()
            print(text)

        r1 = train_stage1(videos, mc, tc, on_epoch=emit)
        ck1 = r1.checkpoint()
        ck1.save(out / "stage1.ckpt")
        if not mc.has("no-seg-rnn"):
            r2 = train_stage2(videos, ck1, tc, on_epoch=emit)
            r2.checkpoint().save(out / "stage2.ckpt")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    manifest = load_manifest(args.manifest)
    if manifest.d_in != ckpt.model_config.d_in:
        raise CheckpointError(f"checkpoint expects D_in={ckpt.model_config.d_in}, "
                              f"dataset has {manifest.d_in}")
    if args.mode == "image" and ckpt.model_config.frames != 1:
        if ckpt.model_config.has("mlp-frame"):
            raise CheckpointError("mlp-frame checkpoints are tied to their frame count")
        ckpt = replace(ckpt, model_config=replace(ckpt.model_config, frames=1))
    model = ckpt.build_model()
    task = args.task or ckpt.train_config.task
    videos = manifest.videos_for(args.split)
    if not videos:
        raise DatasetError(f"split {args.split!r} has no videos")
    report = evaluate(model, videos, ckpt.stage, task)
    if args.out:
        report.write(args.out, prefix=f"eval_stage{ckpt.stage}_{args.split}")
    print(report.render())
    print(json.dumps({"stage": ckpt.stage, "task": task, "split": args.split,
                      "macro_f1_subactivity": report.subactivity.macro_f1,
                      "macro_f1_affordance": report.affordance.macro_f1}, sort_keys=True))
    return EXIT_OK


def micro_gradcheck(seed: int = 0, tolerance: float = 1e-4, max_elements: int | None = 48,
                    inject_bug: bool = False):
    """Full-pipeline check on the micro model (D_in=8, T=3, N=1, widths 16, float64)."""
    from .synth import generate_videos

    videos, _ = generate_videos(SynthSpec(seed=seed, n_videos=1, segments_per_video=2,
                                          objects_range=(1, 1), d_in=8, frames_range=(3, 6),
                                          n_test_videos=0))
    model = HOIModel(ModelConfig.micro(), seed)
    rng = np.random.default_rng(seed)
    # B starts at zero; perturb it so its gradient path is exercised generically
    for block in model.spatial.blocks:
        block.adj_learned.data[...] = 0.1 * rng.standard_normal(block.adj_learned.shape)
    ex = build_examples(model, videos, "detect")[0]
    tc = TrainConfig(seed=seed)
    faults = ("tanh",) if inject_bug else ()
    with inject_backward_fault(*faults):
        return grad_check(lambda: video_loss(model, ex, tc), model.parameters(), tolerance,
                          max_elements=max_elements or None, rng=rng)


def cmd_gradcheck(args) -> int:
    t0 = time.perf_counter()
    report = micro_gradcheck(args.seed, args.tolerance, args.max_elements, args.inject_bug)
    for line in report.lines():
        print(line)
    print(f"seconds={time.perf_counter() - t0:.1f}")
    return EXIT_OK if report.passed else EXIT_CHECK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "gradcheck": cmd_gradcheck}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"hoigraph: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, CheckpointError) as exc:
        print(f"hoigraph: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
