"""Command-line entry point: convert, synth, train, eval, render.

Exit codes: 0 success; 2 parse/usage failure (bad flags, malformed input
lines); 3 violated precondition (missing files, stage order, incompatible
checkpoints); 4 training divergence.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import harmonize, metrics, synth, trainer
from .figures import (
    overlay_figure,
    per_joint_figure,
    save_figure,
    training_curves_figure,
    wireframe_figure,
)
from .losses import DivergenceError
from .model import (
    ArchitectureMismatchError,
    ModelConfig,
    PoseNet,
    load_checkpoint,
    predict_pose3d,
)
from .skeleton import CanonicalPose2D

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_PRECONDITION = 3
EXIT_DIVERGENCE = 4

_EPILOG = """exit codes:
  0  success
  2  parse/usage failure (bad flags, malformed JSON-lines input)
  3  violated precondition (missing inputs, stage order, checkpoint mismatch)
  4  training divergence (non-finite loss)
"""


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pose3d",
        description="Weakly-supervised 3D human pose estimation toolkit",
        epilog=_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert raw dataset records to canonical samples")
    p.add_argument("--dataset", required=True,
                   choices=sorted(harmonize.DATASETS_2D + harmonize.DATASETS_3D),
                   help="source dataset format")
    p.add_argument("--input", required=True, help="raw-record JSON-lines file")
    p.add_argument("--output", required=True, help="harmonized JSON-lines output")

    p = sub.add_parser("synth", help="generate synthetic source-format records")
    p.add_argument("--format", required=True,
                   choices=sorted(harmonize.DATASETS_2D + harmonize.DATASETS_3D))
    p.add_argument("--n", type=int, default=100, help="number of records")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="train", choices=["train", "test"])
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--jitter", type=float, default=0.18, help="pose jitter in radians")
    p.add_argument("--nan-prob", type=float, default=0.1, help="FLIC NaN-injection probability")
    p.add_argument("--out", required=True, help="output JSON-lines file")

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--config", help="JSON file with TrainingConfig fields")
    p.add_argument("--stage", choices=list(trainer.STAGES))
    p.add_argument("--mode", choices=["fusion", "3d-only"])
    p.add_argument("--data-2d", help="harmonized 2D training samples")
    p.add_argument("--data-3d", help="harmonized 3D training samples")
    p.add_argument("--val-data", help="harmonized validation samples")
    p.add_argument("--resume", help="checkpoint of the previous stage")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--epoch-scale", type=int, default=1,
                   help="multiply epochs and drop epochs by this factor")
    p.add_argument("--image-size", type=int, default=64, help="network input resolution")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--epochs", type=int, help="override the stage epoch count")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float, help="override the initial learning rate")
    p.add_argument("--lambda-reg", type=float)
    p.add_argument("--lambda-geo", type=float)

    p = sub.add_parser("eval", help="evaluate a checkpoint and write reports")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="harmonized samples to evaluate")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--decode", default="argmax", choices=["argmax", "soft"])
    p.add_argument("--per-joint", action="store_true", help="include the 16-joint breakdown")

    p = sub.add_parser("render", help="render prediction figures for one sample")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="harmonized samples file")
    p.add_argument("--index", type=int, default=0, help="sample index within the file")
    p.add_argument("--decode", default="argmax", choices=["argmax", "soft"])
    p.add_argument("--out-dir", required=True)

    return parser


def _cmd_convert(args) -> int:
    records = harmonize.read_raw_records(args.input)
    samples = []
    nan_substituted = 0
    for record in records:
        if record.dataset_id != args.dataset:
            raise harmonize.HarmonizeError(
                f"record dataset {record.dataset_id!r} does not match --dataset {args.dataset!r}"
            )
        if record.dataset_id == "FLIC":
            nan_substituted += sum(
                int(np.any(np.isnan(record.joints[src])))
                for src in harmonize._FLIC_MAP.values()
            )
        samples.append(harmonize.harmonize_record(record))
    harmonize.write_harmonized(samples, args.output)
    excluded = sum(1 for s in samples if s.excluded)
    print(f"converted {len(samples)} records ({excluded} excluded as degenerate, "
          f"{nan_substituted} NaN joints substituted)")
    return EXIT_OK


def _cmd_synth(args) -> int:
    params = synth.SynthParams(
        seed=args.seed,
        n_samples=args.n,
        pose_jitter=args.jitter,
        image_size=args.image_size,
        nan_probability=args.nan_prob,
    )
    records = synth.generate_records(params, args.format, split=args.split)
    harmonize.write_raw_records(records, args.out)
    print(f"wrote {len(records)} {args.format} records to {args.out}")
    return EXIT_OK


def _load_samples(path: str | None) -> list:
    if path is None:
        return []
    return harmonize.read_harmonized(path)


_CONFIG_OVERRIDES = {
    "seed": "seed",
    "epochs": "epochs",
    "batch_size": "batch_size",
    "lr": "initial_lr",
    "lambda_reg": "lambda_reg",
    "lambda_geo": "lambda_geo",
}


def _resolve_training_config(args) -> trainer.TrainingConfig:
    file_doc = {}
    if args.config:
        with open(args.config) as fh:
            file_doc = json.load(fh)
    stage = args.stage or file_doc.get("stage")
    if stage is None:
        raise ValueError("--stage is required (flag or config file)")
    mode = args.mode or file_doc.get("mode", "fusion")
    mode = "three_d_only" if mode == "3d-only" else mode
    config = trainer.default_config(stage, mode)
    file_overrides = {
        k: v for k, v in file_doc.items()
        if k in trainer.TrainingConfig.__dataclass_fields__ and k not in ("stage", "mode")
    }
    if "lr_drop_epochs" in file_overrides:
        file_overrides["lr_drop_epochs"] = tuple(file_overrides["lr_drop_epochs"])
    if file_overrides:
        config = dataclasses.replace(config, **file_overrides)
    flag_overrides = {}
    for flag, field_name in _CONFIG_OVERRIDES.items():
        value = getattr(args, flag)
        if value is not None:
            flag_overrides[field_name] = value
    if "epochs" in flag_overrides:
        # keep drop epochs legal when the schedule is shortened
        drops = tuple(d for d in config.lr_drop_epochs if d < flag_overrides["epochs"])
        flag_overrides["lr_drop_epochs"] = drops
    if flag_overrides:
        config = dataclasses.replace(config, **flag_overrides)
    if args.epoch_scale != 1:
        config = trainer.scale_epochs(config, args.epoch_scale)
    return config


def _cmd_train(args) -> int:
    config = _resolve_training_config(args)
    bundle = trainer.DataBundle(
        samples_2d=_load_samples(args.data_2d),
        samples_3d=_load_samples(args.data_3d),
    )
    val = _load_samples(args.val_data) or None

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    resume_meta = None
    if args.resume:
        net, resume_meta = load_checkpoint(args.resume)
        if net.config.input_size != args.image_size:
            raise ArchitectureMismatchError(
                f"checkpoint input size {net.config.input_size} != --image-size {args.image_size}"
            )
    else:
        net = PoseNet(ModelConfig(
            input_size=args.image_size, heatmap_size=min(64, args.image_size), seed=config.seed,
        ))

    with open(out_dir / "config_used.json", "w") as fh:
        json.dump(dataclasses.asdict(config), fh, indent=2, sort_keys=True)

    meta, entries = trainer.run_stage(
        config, net, bundle, val,
        resume_meta=resume_meta,
        checkpoint_path=out_dir / "checkpoint.pt",
        log_path=out_dir / "metrics.jsonl",
    )
    if any(e["split"] == "val" for e in entries):
        save_figure(training_curves_figure(entries), out_dir / "curves.png")
    last = entries[-1]
    print(f"stage {config.stage} complete: {config.epochs} epochs; "
          f"checkpoint {out_dir / 'checkpoint.pt'}")
    if last["split"] == "val":
        mpjpe_text = "--" if last["mpjpe"] is None else f"{last['mpjpe']:.2f}mm"
        print(f"final validation: PCKh@0.5 {last['pckh']:.2f}%  MPJPE {mpjpe_text}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    net, _ = load_checkpoint(args.checkpoint)
    samples = harmonize.read_harmonized(args.data)
    report = metrics.evaluate(net, metrics.EvalData(samples, net.config.input_size), decode=args.decode)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(metrics.report_to_json(report) + "\n")
    table = metrics.format_report_table(report, per_joint=args.per_joint)
    (out_dir / "report.txt").write_text(table)
    (out_dir / "per_joint.csv").write_text(metrics.per_joint_csv(report))
    save_figure(per_joint_figure(report), out_dir / "per_joint.png")
    print(table, end="")
    return EXIT_OK


def _cmd_render(args) -> int:
    net, _ = load_checkpoint(args.checkpoint)
    samples = harmonize.read_harmonized(args.data)
    if not 0 <= args.index < len(samples):
        raise ValueError(f"--index {args.index} outside [0, {len(samples)})")
    sample = samples[args.index]
    image = synth.render_pose_image(sample.pose2d, net.config.input_size, sample.depth)
    pose = predict_pose3d(net, image.transpose(2, 0, 1), decode=args.decode)
    out_dir = Path(args.out_dir)
    pose2d_pred = CanonicalPose2D(pose.coords[:, :2].copy())
    save_figure(overlay_figure(image, pose2d_pred, sample.pose2d), out_dir / "overlay.png")
    save_figure(wireframe_figure(pose, title=f"sample {args.index}"), out_dir / "wireframe.png")
    print(f"wrote {out_dir / 'overlay.png'} and {out_dir / 'wireframe.png'}")
    return EXIT_OK


_COMMANDS = {
    "convert": _cmd_convert,
    "synth": _cmd_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "render": _cmd_render,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except harmonize.RecordParseError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_PARSE
    except DivergenceError as err:
        print(f"error: training diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (
        harmonize.HarmonizeError,
        trainer.StageOrderError,
        ArchitectureMismatchError,
        metrics.MetricsError,
        FileNotFoundError,
        ValueError,
        RuntimeError,
    ) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
