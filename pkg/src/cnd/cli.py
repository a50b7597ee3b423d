"""Command line entry point: ``cnd <experiment> --config FILE`` and ``cnd list``."""

from __future__ import annotations

import argparse
import json
import sys

from .config import EXPERIMENTS, load_config
from .errors import CNDError, InputError, ResourceError, SchemaError
from .harness import bundled_config, list_experiments, run

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_RESOURCE = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cnd", description="Conditional neighborhood dependence experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    lp = sub.add_parser("list", help="show the experiment registry")
    lp.add_argument("--json", action="store_true", help="machine-readable output")
    for name in EXPERIMENTS:
        ep = sub.add_parser(name, help=f"run the {name} experiment")
        ep.add_argument("--config", help="JSON config file (default: the bundled one)")
        ep.add_argument("--seed", type=int)
        ep.add_argument("--reps", type=int)
        ep.add_argument("--out", help="output directory (overrides output.dir)")
        ep.add_argument("--workers", type=int, default=1, help="worker processes; 0 means all cores (max 8)")
        ep.add_argument("--json", action="store_true", help="print the run record as JSON")
        ep.add_argument("--allow-large", action="store_true", help="lift the reps x n resource guard")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list":
        print(list_experiments(args.json))
        return EXIT_PASS
    try:
        path = args.config or bundled_config(args.command)
        cfg = load_config(path, {"seed": args.seed, "reps": args.reps})
        if cfg.experiment != args.command:
            raise SchemaError(f"config is for {cfg.experiment!r}, not {args.command!r}", "experiment")
        result = run(cfg, workers=args.workers, out_dir=args.out, allow_large=args.allow_large)
    except (SchemaError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ResourceError as exc:
        print(f"resource guard: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except CNDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.json:
        print(json.dumps(result.to_dict(), indent=2, sort_keys=True))
    else:
        for v in result.verdicts:
            print(f"{'PASS' if v['passed'] else 'FAIL'}  {v['name']}  ({v['detail']})")
        print(f"{result.experiment}: {'pass' if result.passed else 'FAIL'} in {result.wall_clock:.1f}s; "
              f"files in {result.files.get('metrics', '-').rsplit('/', 1)[0]}")
    return EXIT_PASS if result.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
