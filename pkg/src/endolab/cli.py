"""Command line entry point: ``endolab <scenario> --config <path> [--seed S] [--out DIR] [--workers K]``.

Exit codes: 0 all assertions pass, 2 an assertion failed, 3 numerical
infrastructure failure (Newton, QR frame, domination), 4 config error.
"""

from __future__ import annotations

import argparse
import sys

from .config import load_config
from .errors import ConfigError, EndolabError, NumericalFailure, OracleMismatch
from .fixtures import regenerate_fixtures
from .scenarios import SCENARIOS, run_scenario

EXIT_OK, EXIT_ASSERT, EXIT_NUMERIC, EXIT_CONFIG = 0, 2, 3, 4


def build_parser():
    p = argparse.ArgumentParser(prog="endolab", description="Experiments on Anosov endomorphisms of tori.")
    p.add_argument("scenario", choices=SCENARIOS + ("fixtures",))
    p.add_argument("--config", required=True, help="YAML or JSON experiment config")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="override the output directory")
    p.add_argument("--workers", type=int, default=1, help="worker threads for orbit ensembles")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.workers < 1:
            raise ConfigError("--workers", "must be >= 1")
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed", "must be non-negative")
        cfg = load_config(args.config).with_overrides(args.seed, args.out)
        if args.scenario == "fixtures":
            path = regenerate_fixtures(cfg)
            print(f"fixtures: wrote {path}")
            return EXIT_OK
        res = run_scenario(args.scenario, cfg, args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OracleMismatch as exc:
        print(f"oracle mismatch: {exc}", file=sys.stderr)
        return EXIT_ASSERT
    except NumericalFailure as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except EndolabError as exc:
        print(f"unsupported model for this scenario: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for c in res.checks:
        tag = "info" if c.informational else ("PASS" if c.passed else "FAIL")
        print(f"[{tag}] {res.scenario}.{c.name}: value={c.value} threshold={c.threshold}")
    print(f"{res.scenario}: {'passed' if res.passed else 'FAILED'} (config {res.config_hash})")
    return EXIT_OK if res.passed else EXIT_ASSERT


if __name__ == "__main__":
    sys.exit(main())
