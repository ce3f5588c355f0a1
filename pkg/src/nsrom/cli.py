"""Command line entry point: ``nsrom {offline,online,figure-data,verify}``.

Settings come from an optional flat ``key = value`` file given with
``--config``; ``--set key=value`` options override the file, and the
dedicated flags (``--n``, ``--seed`` ...) override both.
"""
from __future__ import annotations

import argparse
import logging
import subprocess
import sys
from pathlib import Path

from . import bench
from .offline import BasisTooLargeError


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="flat key = value settings file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a configuration field (repeatable)")
    p.add_argument("--n", type=int)
    p.add_argument("--n-d", dest="n_d", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def _config(args) -> bench.ExperimentConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise bench.ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v
    for name in ("n", "n_d", "seed", "n_trial", "n_s"):
        val = getattr(args, name, None)
        if val is not None:
            overrides[name] = val
    return bench.load_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nsrom", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("offline", help="build the reduced basis and DEIM operator")
    _common(p)
    p.add_argument("--n-trial", dest="n_trial", type=int)
    p.add_argument("--out", type=Path, required=True, help="bundle directory")

    p = sub.add_parser("online", help="solve full, reduced and DEIM models on random parameters")
    _common(p)
    p.add_argument("--n-s", dest="n_s", type=int)
    p.add_argument("--bundle", type=Path, required=True)
    p.add_argument("--csv", type=Path, required=True)

    p = sub.add_parser("figure-data", help="residual indicator versus number of DEIM vectors")
    _common(p)
    p.add_argument("--n-s", dest="n_s", type=int)
    p.add_argument("--bundle", type=Path, required=True)
    p.add_argument("--sweep", choices=bench.SWEEPS, required=True)
    p.add_argument("--csv", type=Path, required=True)

    p = sub.add_parser("verify", help="run the test suite; unknown options go to pytest")
    p.add_argument("--acceptance", action="store_true", help="only the acceptance checks")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    if extra and args.command != "verify":
        parser.error(f"unrecognized arguments: {' '.join(extra)}")
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "verify":
        root = Path(__file__).resolve().parents[2]
        target = root / "tests" / ("test_acceptance.py" if args.acceptance else "")
        cmd = [sys.executable, "-m", "pytest", "-q", "-s", str(target), *extra]
        return subprocess.call(cmd, cwd=root)
    try:
        config = _config(args)
        if args.command == "offline":
            path, result = bench.run_offline(config, args.out)
            print(f"bundle {path}: k_s={result.k_s} k={result.k} config_hash={config.hash()}")
        elif args.command == "online":
            rows = bench.run_online(config, args.bundle)
            bench.write_csv(rows, args.csv)
            print(f"wrote {len(rows)} rows to {args.csv}")
        else:
            rows = bench.figure_data(config, args.bundle, args.sweep)
            bench.write_csv(rows, args.csv)
            print(f"wrote {len(rows)} rows to {args.csv}")
    except (bench.ConfigError, FileNotFoundError, BasisTooLargeError) as exc:
        print(f"nsrom: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
