"""Command-line entry point: ``lemda run|ablate|figure3|throughput``.

Exit codes: 0 success, 2 configuration error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys

from ..trainer import DivergenceError
from .config import ConfigError, load
from .figure3 import render_figure3
from .runner import SUITES, ablation_suite, measure_throughput, run

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lemda", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train every seed in a config and write metrics")
    p.add_argument("--config", required=True)

    p = sub.add_parser("ablate", help="run one ablation grid around a base config")
    p.add_argument("--config", required=True)
    p.add_argument("--suite", required=True, choices=SUITES)

    p = sub.add_parser("figure3", help="render the consistency-preference SVG")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("throughput", help="median optimizer steps per second")
    p.add_argument("--config", required=True)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--steps", type=int, default=30)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            run(load(args.config))
        elif args.command == "ablate":
            rows = ablation_suite(load(args.config), args.suite)
            for r in rows:
                print(f'{r["variant"]:<32} {r["mean_accuracy"]:.4f} +/- {r["std_accuracy"]:.4f}')
        elif args.command == "figure3":
            svg, csv_path, probe = render_figure3(args.out, args.seed)
            print(f"wrote {svg} and {csv_path}")
        elif args.command == "throughput":
            cfg = load(args.config)
            if args.steps < 10:
                raise ConfigError("--steps must be at least 10")
            res = measure_throughput(cfg, args.warmup, args.steps)
            print(f'{res["augmentation"]}: {res["steps_per_second"]:.2f} steps/s, '
                  f'{res["examples_per_second"]:.1f} examples/s (batch {res["batch_size"]})')
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
