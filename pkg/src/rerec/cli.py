"""Command-line entry point.

Exit codes: 0 success, 1 usage/config, 2 data, 3 divergence, 4 staleness.
"""
import argparse
import logging
import sys

from . import pipeline
from .config import SCHEMA, load_config
from .errors import RerecError

STAGES = {
    "gen-synthetic": pipeline.stage_gen_synthetic,
    "ingest": pipeline.stage_ingest,
    "train-embeddings": pipeline.stage_train_embeddings,
    "train-world": pipeline.stage_train_world,
    "train-policy": pipeline.stage_train_policy,
    "eval": pipeline.stage_eval,
    "ablate": pipeline.stage_ablate,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="rerec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
    sub.add_parser("show-config", help="print every config key with its default")
    return parser


def _overrides(args):
    out = {}
    for item in args.set:
        if "=" not in item:
            raise RerecError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    if args.seed is not None:
        out["seed"] = args.seed
    if args.out is not None:
        out["out"] = args.out
    return out


def _summary(command, result):
    if command == "eval":
        return result.to_text()
    if command == "ablate":
        from .evalharness import comparison_table

        return comparison_table(result[0])
    return f"{command}: {result}\n"


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "show-config":
        for key, (default, doc) in SCHEMA.items():
            print(f"{key} = {default}    # {doc}")
        return 0
    try:
        cfg = load_config(args.config, _overrides(args))
        pipeline.echo_config(cfg)
        result = STAGES[args.command](cfg, force=args.force)
    except RerecError as exc:
        print(f"rerec {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"rerec {args.command}: error: {exc}", file=sys.stderr)
        return 2
    sys.stdout.write(_summary(args.command, result))
    if args.command == "ablate" and result[1]:
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
