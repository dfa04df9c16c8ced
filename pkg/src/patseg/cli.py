"""Command-line entry point for the whole pipeline.

One executable, eight subcommands: phantom, groundtruth, train, predict,
evaluate, quantify, stats, overlay. Every subcommand is deterministic
given its inputs and seed, so reruns produce byte-identical artifacts.
Usage mistakes exit 2 (argparse convention); module failures print one
diagnostic line to stderr and exit 1.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .config import load_pipeline_config, render_config
from .groundtruth import candidate_pat_mask
from .metrics import evaluate_pair, patv_cm3, write_eval_csv
from .network import load_checkpoint, save_checkpoint
from .overlay import render_overlay
from .phantom import _cohort
from .stats import (
    join_patv,
    read_patv_csv,
    read_records_csv,
    render_analysis,
    run_paper_analysis,
    write_analysis_csv,
    write_patv_csv,
)
from .trainer import predict, train
from .volumes import load_mask, load_volume, save_mask

__all__ = ["run_command", "main"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patseg",
        description="Pericardial fat segmentation and quantification pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, default=None,
                       help="key=value configuration file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       dest="overrides", help="override one config key")
        p.add_argument("--seed", type=int, default=None,
                       help="global seed (shorthand for --set seed=N)")

    p = sub.add_parser("phantom", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--n", type=int, default=10, help="number of cases")
    p.add_argument("--out", type=Path, default=None,
                   help="dataset directory (default: <output_root>/cohort)")

    p = sub.add_parser("groundtruth",
                       help="threshold-based candidate fat mask for one case")
    common(p)
    p.add_argument("--volume", type=Path, required=True)
    p.add_argument("--chambers", type=Path, required=True,
                   help="chamber mask marking the heart")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--margin-mm", type=float, default=10.0)
    p.add_argument("--bins", type=int, default=256)

    p = sub.add_parser("train", help="fit the segmentation network")
    common(p)
    p.add_argument("--cases", type=Path, default=None,
                   help="dataset directory (default: data root)")
    p.add_argument("--labels", default="pat_truth.nii.gz",
                   help="label file name inside each case directory")
    p.add_argument("--out", type=Path, default=None,
                   help="checkpoint path (default: <output_root>/model.ckpt)")

    p = sub.add_parser("predict", help="segment volumes with a checkpoint")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--volume", type=Path, default=None,
                   help="single input volume")
    p.add_argument("--out", type=Path, default=None,
                   help="output mask path (single-volume mode)")
    p.add_argument("--cases", type=Path, default=None,
                   help="dataset directory (batch mode)")
    p.add_argument("--out-name", default="predicted.nii.gz",
                   help="output mask name inside each case directory")

    p = sub.add_parser("evaluate", help="score predictions against truth")
    common(p)
    p.add_argument("--cases", type=Path, required=True)
    p.add_argument("--truth-name", default="pat_truth.nii.gz")
    p.add_argument("--pred-name", default="predicted.nii.gz")
    p.add_argument("--out", type=Path, default=None,
                   help="evaluation CSV (default: <output_root>/evaluation.csv)")

    p = sub.add_parser("quantify", help="fat volume per case, in cm^3")
    common(p)
    p.add_argument("--cases", type=Path, required=True)
    p.add_argument("--mask-name", default="predicted.nii.gz")
    p.add_argument("--out", type=Path, default=None,
                   help="volumes CSV (default: <output_root>/patv.csv)")

    p = sub.add_parser("stats", help="cohort association analysis")
    common(p)
    p.add_argument("--records", type=Path, required=True,
                   help="cohort CSV (case_id,age,sex,bmi,deceased,cvd_diagnosis)")
    p.add_argument("--patv", type=Path, required=True,
                   help="fat volume CSV from the quantify step")
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--out", type=Path, default=None,
                   help="report path (default: <output_root>/analysis.txt)")
    p.add_argument("--report-csv", type=Path, default=None,
                   help="machine-readable report (default: table path with .csv)")

    p = sub.add_parser("overlay", help="contour images for visual review")
    common(p)
    p.add_argument("--volume", type=Path, required=True)
    p.add_argument("--truth", type=Path, default=None)
    p.add_argument("--pred", type=Path, default=None)
    p.add_argument("--out", type=Path, required=True,
                   help="directory for per-slice PNGs")
    p.add_argument("--scale", type=int, default=4)

    return parser


def _load_config(args):
    overrides = {}
    for item in args.overrides:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise SystemExit(2)
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    return load_pipeline_config(args.config, env=dict(os.environ),
                                overrides=overrides)


def _case_dirs(root: Path) -> list[Path]:
    if not root.is_dir():
        raise ValueError(f"not a dataset directory: {root}")
    dirs = sorted(p for p in root.iterdir()
                  if p.is_dir() and (p / "volume.nii.gz").exists())
    if not dirs:
        raise ValueError(f"no case directories under {root}")
    return dirs


def _out_path(args, cfg, default_name: str) -> Path:
    if args.out is not None:
        return args.out
    cfg.output_root.mkdir(parents=True, exist_ok=True)
    return cfg.output_root / default_name


def _cmd_phantom(args, cfg) -> int:
    out = args.out if args.out is not None else cfg.output_root / "cohort"
    records = _cohort(args.n, cfg.seed, cfg.effects, cfg.phantom, out)
    (out / "run_config.cfg").write_text(render_config(cfg))
    print(f"wrote {len(records)} cases to {out}")
    return 0


def _cmd_groundtruth(args, cfg) -> int:
    volume = load_volume(args.volume)
    chambers = load_mask(args.chambers)
    candidate = candidate_pat_mask(volume, chambers,
                                   margin_mm=args.margin_mm, bins=args.bins)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_mask(candidate, args.out)
    print(f"candidate mask: {candidate.foreground_count} voxels -> {args.out}")
    return 0


def _cmd_train(args, cfg) -> int:
    root = args.cases if args.cases is not None else cfg.data_root
    cases = []
    for case_dir in _case_dirs(root):
        label = case_dir / args.labels
        if not label.exists():
            raise ValueError(f"missing label file {label}")
        cases.append((load_volume(case_dir / "volume.nii.gz"),
                      load_mask(label)))
    ckpt = train(cases, cfg.train)
    out = _out_path(args, cfg, "model.ckpt")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, out)
    out.with_suffix(".cfg").write_text(render_config(cfg))
    best = ckpt.meta.get("best_val_loss", ckpt.meta.get("final_train_loss"))
    print(f"trained on {len(cases)} cases, best loss {best:.4f} -> {out}")
    return 0


def _cmd_predict(args, cfg) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if (args.volume is None) == (args.cases is None):
        raise ValueError("give exactly one of --volume or --cases")
    if args.volume is not None:
        if args.out is None:
            raise ValueError("--out is required with --volume")
        mask = predict(ckpt, load_volume(args.volume))
        args.out.parent.mkdir(parents=True, exist_ok=True)
        save_mask(mask, args.out)
        print(f"predicted {mask.foreground_count} voxels -> {args.out}")
        return 0
    for case_dir in _case_dirs(args.cases):
        mask = predict(ckpt, load_volume(case_dir / "volume.nii.gz"))
        save_mask(mask, case_dir / args.out_name)
    print(f"predicted {args.out_name} for {len(_case_dirs(args.cases))} cases")
    return 0


def _cmd_evaluate(args, cfg) -> int:
    rows = []
    for case_dir in _case_dirs(args.cases):
        pred = load_mask(case_dir / args.pred_name)
        truth = load_mask(case_dir / args.truth_name)
        rows.append((case_dir.name, evaluate_pair(pred, truth)))
    out = _out_path(args, cfg, "evaluation.csv")
    write_eval_csv(rows, out)
    mean_dice = float(np.mean([r.dice for _, r in rows]))
    print(f"evaluated {len(rows)} cases, mean dice {mean_dice:.4f} -> {out}")
    return 0


def _cmd_quantify(args, cfg) -> int:
    volumes = {}
    for case_dir in _case_dirs(args.cases):
        volumes[case_dir.name] = patv_cm3(load_mask(case_dir / args.mask_name))
    out = _out_path(args, cfg, "patv.csv")
    write_patv_csv(volumes, out)
    print(f"quantified {len(volumes)} cases -> {out}")
    return 0


def _cmd_stats(args, cfg) -> int:
    records = join_patv(read_records_csv(args.records),
                        read_patv_csv(args.patv))
    result = run_paper_analysis(records, alpha=args.alpha)
    text = render_analysis(result)
    out = _out_path(args, cfg, "analysis.txt")
    csv_out = (args.report_csv if args.report_csv is not None
               else out.with_suffix(".csv"))
    if csv_out == out:
        raise ValueError("report CSV path equals the table path; "
                         "pass a distinct --report-csv")
    out.write_text(text)
    write_analysis_csv(result, csv_out)
    print(text, end="")
    print(f"analysis -> {out}")
    print(f"report csv -> {csv_out}")
    return 0


def _cmd_overlay(args, cfg) -> int:
    volume = load_volume(args.volume)
    truth = load_mask(args.truth) if args.truth is not None else None
    pred = load_mask(args.pred) if args.pred is not None else None
    paths = render_overlay(volume, truth, pred, args.out, scale=args.scale)
    print(f"wrote {len(paths)} slice images to {args.out}")
    return 0


_COMMANDS = {
    "phantom": _cmd_phantom,
    "groundtruth": _cmd_groundtruth,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "evaluate": _cmd_evaluate,
    "quantify": _cmd_quantify,
    "stats": _cmd_stats,
    "overlay": _cmd_overlay,
}


def run_command(argv: list[str]) -> int:
    """Parse argv and run one subcommand; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors itself
        return int(exc.code or 0)
    try:
        cfg = _load_config(args)
        return _COMMANDS[args.command](args, cfg)
    except SystemExit as exc:
        return int(exc.code or 0)
    except Exception as exc:  # one diagnostic line, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))
