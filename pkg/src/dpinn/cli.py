"""``dpinn`` command line: run an experiment from a JSON config.

Exit status is 0 on success, 1 for configuration errors and 2 for failures
during the run.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _limit_threads() -> None:
    n = os.environ.get("DPINN_THREADS")
    if not n:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, n)
    flags = os.environ.get("XLA_FLAGS", "")
    os.environ["XLA_FLAGS"] = f"{flags} --xla_cpu_multi_thread_eigen=false intra_op_parallelism_threads={n}".strip()


def build_parser() -> argparse.ArgumentParser:
    from .config import EXPERIMENTS

    parser = argparse.ArgumentParser(prog="dpinn", description="Eigenfunction-encoded PINN experiments on meshes.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", default=None, help="output directory (default runs/<experiment>)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--parallel", type=int, default=1, help="worker processes for sweeps")
    return parser


def main(argv=None) -> int:
    _limit_threads()
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    from .config import ConfigError, validate_config

    try:
        cfg = validate_config(args.config, args.experiment)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed must be nonnegative")
            cfg["seed"] = args.seed
        if args.parallel < 1:
            raise ConfigError("--parallel must be at least 1")
    except ConfigError as err:
        print(f"dpinn: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG

    from .experiments import run_experiment

    out = args.out or os.path.join("runs", args.experiment)
    try:
        summary = run_experiment(cfg, out, args.parallel)
    except ConfigError as err:
        print(f"dpinn: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as err:  # noqa: BLE001 - report any failure as a runtime error
        print(f"dpinn: {args.experiment} failed: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps(summary, default=str, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
