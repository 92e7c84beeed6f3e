"""Command-line interface: synthesize data, run experiments, evaluate, train.

Every subcommand is deterministic given its flags and seed. Paths are
interpreted relative to the working directory; the PATCHSCOPE_THREADS
environment variable supplies the default worker count.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

from .classifier import TrainConfig, save_model
from .dataset import make_pattern, read_manifest, write_synth_dataset
from .evaluation import format_metrics_row, metrics_from_counts, ConfusionCounts
from .experiment import (
    evaluate_predictions,
    load_config,
    run_full_experiment,
    train_for_strategy,
)
from .augment import AugmentSpec
from .pipeline import parse_strategy, read_predictions_jsonl

ENV_THREADS = "PATCHSCOPE_THREADS"


def _resolve_workers(cli_value: int | None, config_value: int = 0) -> int:
    if cli_value is not None and cli_value > 0:
        return cli_value
    if config_value > 0:
        return config_value
    env = os.environ.get(ENV_THREADS)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            print(f"warning: ignoring non-integer {ENV_THREADS}={env!r}", file=sys.stderr)
    return 1


def _parse_dims(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"dims must look like 1024x1024, got {text!r}")


def cmd_synth(args: argparse.Namespace) -> int:
    overrides = {}
    if args.feature_size is not None:
        overrides["feature_size"] = args.feature_size
    if args.density is not None:
        overrides["feature_density"] = args.density
    if args.cluster_diameter is not None:
        overrides["cluster_diameter"] = args.cluster_diameter
    width, height = args.dims
    pattern = make_pattern(args.pattern, **overrides)
    entries = write_synth_dataset(pattern, args.n, width, height, args.seed,
                                  out_dir=args.out,
                                  positive_fraction=args.positive_fraction,
                                  id_prefix=args.prefix)
    n_pos = sum(1 for e in entries if e.label.is_positive)
    print(f"wrote {len(entries)} images ({n_pos} positive) to {args.out} "
          f"[pattern={args.pattern} dims={width}x{height} seed={args.seed}]")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if args.control == "random-labels":
        config = replace(config, control=True)
    if args.out is not None:
        config = replace(config, out_dir=args.out)
    workers = _resolve_workers(args.workers, config.workers)
    report_path, n_errors = run_full_experiment(config, workers=workers)
    print(f"report written to {report_path} ({n_errors} image errors)")
    return 0 if n_errors == 0 else 1


def cmd_eval(args: argparse.Namespace) -> int:
    predictions = read_predictions_jsonl(args.predictions)
    truth = read_manifest(args.truth)
    report = evaluate_predictions(predictions, truth)

    print(f"{'strategy':<18} {'TPR':>7} {'TNR':>7} {'Acc':>7} {'PP':>6} {'n':>5} {'indet':>6}")
    for name, block in report["strategies"].items():
        whole = block.get("whole_image")
        if whole:
            c = whole["counts"]
            m = metrics_from_counts(ConfusionCounts(**c))
            row = format_metrics_row(m).split()
            print(f"{name:<18} {row[0]:>7} {row[1]:>7} {row[2]:>7} {row[3]:>6} "
                  f"{block['n_images']:>5} {len(block['indeterminate']):>6}")
        else:
            print(f"{name:<18} (no decided predictions)")
    if args.out:
        import json
        Path(args.out).write_text(json.dumps(report, indent=2) + "\n")
        print(f"report written to {args.out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    entries = read_manifest(args.manifest)
    strategy = parse_strategy(args.strategy)
    cfg = TrainConfig(epochs=args.epochs, learning_rate=args.learning_rate,
                      batch_size=args.batch_size, seed=args.seed, l2=args.l2)
    aug = AugmentSpec() if args.augment else AugmentSpec.identity()
    model = train_for_strategy(entries, strategy, cfg, aug,
                               bg_threshold=args.bg_threshold,
                               workers=_resolve_workers(args.workers))
    save_model(model, args.out)
    print(f"trained {args.strategy} model on {len(entries)} images -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patchscope",
        description="Multi-scale patch classification pipeline for whole-biopsy images.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    p.add_argument("--pattern", required=True,
                   choices=["local", "edge", "half", "global"])
    p.add_argument("--n", type=int, required=True, help="number of images")
    p.add_argument("--dims", type=_parse_dims, required=True, help="WxH, e.g. 1024x1024")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--feature-size", type=int, default=None, help="mark diameter, px")
    p.add_argument("--density", type=float, default=None,
                   help="fraction of the pattern support covered by marks")
    p.add_argument("--cluster-diameter", type=int, default=None)
    p.add_argument("--positive-fraction", type=float, default=0.5)
    p.add_argument("--prefix", default="synth", help="image id prefix")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="split, train, and evaluate per the config")
    p.add_argument("--config", required=True, help="JSON or TOML experiment config")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--control", choices=["random-labels"], default=None)
    p.add_argument("--out", default=None, help="override the config output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="recompute metrics from stored predictions")
    p.add_argument("--predictions", required=True, help="predictions JSONL")
    p.add_argument("--truth", required=True, help="truth manifest CSV")
    p.add_argument("--out", default=None, help="write the full report JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train", help="train one strategy's model from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--strategy", required=True, help="e.g. patch-224 or downscale-1000")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--learning-rate", type=float, default=0.5)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--l2", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--augment", action="store_true",
                   help="enable default geometric augmentation")
    p.add_argument("--bg-threshold", type=int, default=240)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True, help="model checkpoint path")
    p.set_defaults(func=cmd_train)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
