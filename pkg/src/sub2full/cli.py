"""Command-line entry point: ``sub2full <command> --config FILE``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import ValidationError
from .config import load_config
from .net import TrainingAborted
from .pipeline import (
    cmd_compare,
    cmd_denoise,
    cmd_evaluate,
    cmd_finetune_volume,
    cmd_reconstruct,
    cmd_simulate,
    cmd_sweep_bandwidth,
    cmd_train,
)
from .schemes import SCHEMES

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    return [int(v) for v in _floats(text)]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sub2full", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment YAML file (defaults apply when omitted)")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--out", help="override the output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", parents=[common], help="simulate training and test volumes (OCTI)")
    p = sub.add_parser("reconstruct", parents=[common], help="reconstruct b-scans to OCTB + PGM")
    p.add_argument("--bscans", type=_ints, default=[0], help="comma-separated b-scan indices")
    for name, text in (("train", "train one scheme"), ("denoise", "denoise held-out images"), ("evaluate", "metrics for one scheme")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--scheme", required=True, help="one of s2f, n2n, n2v")
        if name == "train":
            p.add_argument("--resume", action="store_true", help="continue from the existing checkpoint")
    p = sub.add_parser("sweep-bandwidth", parents=[common], help="train one S2F model per window bandwidth")
    p.add_argument("--betas", type=_floats, help="comma-separated bandwidth fractions")
    sub.add_parser("compare", parents=[common], help="R1 / Merged / S2F / N2N / N2V metric table")
    p = sub.add_parser("finetune", parents=[common], help="per-volume S2F model from a fraction of frames")
    p.add_argument("--fraction", type=float, help="fraction of b-scans used for training")
    return parser


def run(args: argparse.Namespace) -> None:
    config = load_config(args.config).with_overrides(seed=args.seed, output_dir=args.out)
    scheme = getattr(args, "scheme", None)
    if scheme is not None and scheme not in SCHEMES:
        raise ValidationError(f"unknown scheme {scheme!r}; expected one of {', '.join(SCHEMES)}")
    config.validate()
    if args.command == "simulate":
        cmd_simulate(config)
    elif args.command == "reconstruct":
        cmd_reconstruct(config, args.bscans)
    elif args.command == "train":
        cmd_train(config, scheme, resume=args.resume)
    elif args.command == "denoise":
        cmd_denoise(config, scheme)
    elif args.command == "evaluate":
        print(cmd_evaluate(config, scheme))
    elif args.command == "sweep-bandwidth":
        print(cmd_sweep_bandwidth(config, args.betas))
    elif args.command == "compare":
        print(cmd_compare(config))
    elif args.command == "finetune":
        print(cmd_finetune_volume(config, args.fraction))


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        run(args)
    except ValidationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (RuntimeError, FloatingPointError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
