"""Command-line entry points.

One subcommand per pipeline stage plus `run` for the whole chain and `synth`
for writing the bundled generator's dataset. Every run is driven by a JSON
config; all randomness flows from config seeds.
"""

from __future__ import annotations

import argparse
import sys

from . import pipeline


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", required=True, help="path to the JSON pipeline config")
    parser.add_argument("--out", default="out", help="artifact output directory")
    parser.add_argument(
        "--threads",
        type=int,
        default=1,
        help="upper bound on worker counts (stages currently execute serially)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ratingkit", description="Default classification, PD calibration, rating bucketing and back-testing pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "run every stage in order"),
        ("train", "feature selection, out-of-time tuning and model fit"),
        ("calibrate", "fit the leaf calibrator from a persisted model"),
        ("rate", "optimize the rating scale from persisted artifacts"),
        ("validate", "back-test the persisted scale on the out-of-time year"),
        ("explain", "Shapley and surrogate explanations from persisted artifacts"),
        ("synth", "write the synthetic dataset CSV described by the config"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = pipeline.load_config(args.config)
    except (OSError, ValueError) as exc:
        print(f"error: bad config: {exc}", file=sys.stderr)
        return 2

    import os

    os.makedirs(args.out, exist_ok=True)
    try:
        if args.command == "run":
            manifest = pipeline.run_pipeline(cfg, args.out)
            for stage, artifacts in manifest["stages"].items():
                print(f"{stage}: {', '.join(artifacts)}")
            print(f"ok (config_hash={manifest['config_hash']})")
            return 0
        if args.command == "synth":
            paths = pipeline.stage_synth(cfg, args.out)
        else:
            paths = pipeline.STAGES[args.command](cfg, args.out)
        for p in paths:
            print(p)
        return 0
    except pipeline.PipelineStageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (pipeline.DependencyError, pipeline.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # surface stage-level causes with a stable prefix
        print(f"error: stage {args.command!r} failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
