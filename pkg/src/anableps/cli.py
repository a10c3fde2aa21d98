"""Command-line entry point.

    anableps <mode> --config <path> [--seed N] [--out DIR] [--policy NAME]
             [--ablation full|s|c] [--print-config]

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import MODES, ConfigError, default_config_text, load_config
from .harness import run_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anableps",
        description="Trace-driven VBR bitrate-control experiments",
    )
    parser.add_argument("mode", nargs="?", choices=MODES, help="experiment mode")
    parser.add_argument("--config", help="INI config file")
    parser.add_argument("--seed", type=int, help="override [experiment] seed")
    parser.add_argument("--out", help="override [experiment] out_dir")
    parser.add_argument("--data", help="override [experiment] data_dir")
    parser.add_argument("--policy", help="override [experiment] policy")
    parser.add_argument(
        "--ablation", choices=("full", "s", "c"), help="override [experiment] ablation"
    )
    parser.add_argument(
        "--print-config",
        action="store_true",
        help="print the full default config and exit",
    )
    frames = parser.add_argument_group(
        "raw frames", "gen-traces: convert a luminance dump to a complexity CSV"
    )
    frames.add_argument("--frames", help="binary file of 8-bit luminance planes")
    frames.add_argument("--width", type=int, help="frame width in pixels")
    frames.add_argument("--height", type=int, help="frame height in pixels")
    frames.add_argument("--fps", type=float, help="capture frame rate")
    frames.add_argument("--gop-frames", type=int, help="I-frame period in frames")
    frames.add_argument("--frames-out", help="output complexity CSV path")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.print_config:
        sys.stdout.write(default_config_text())
        return 0
    try:
        cfg = load_config(args.config)
        if args.mode:
            cfg.mode = args.mode
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out:
            cfg.out_dir = args.out
        if args.data:
            cfg.data_dir = args.data
        if args.policy:
            cfg.policy = args.policy
        if args.ablation:
            cfg.ablation = args.ablation
        cfg.validate()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.frames:
            if cfg.mode != "gen-traces":
                print("config error: --frames requires gen-traces mode", file=sys.stderr)
                return 2
            missing = [
                k for k in ("width", "height", "fps", "frames_out")
                if getattr(args, k) is None
            ]
            if missing:
                print(f"config error: --frames needs {missing}", file=sys.stderr)
                return 2
            from .harness import frames_to_complexity_csv

            out = frames_to_complexity_csv(
                args.frames, args.width, args.height, args.fps,
                args.frames_out, gop_frames=args.gop_frames,
            )
            result = {"complexity_csv": str(out)}
        else:
            result = run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    json.dump(result, sys.stdout, sort_keys=True, indent=2, default=str)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
