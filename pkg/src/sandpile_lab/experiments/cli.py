"""Command-line interface.

Subcommands: stabilize, activity, carpet, block, bootstrap, verify.
Global flags: --config, --seed, --replicas, --out, --format, --threads.
Flags override config-file values.  Exit codes: 0 on success, 1 when an
enabled check fails or an invariant is violated, 2 on configuration
errors.  Data goes to --out (or stdout); logs go to stderr.
"""

from __future__ import annotations

import argparse
import sys

from ..errors import ConfigError
from .config import COMMANDS, _SCHEMAS
from .runners import run_command


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sandpile-lab",
        description="Seeded Monte Carlo experiments for the one-dimensional "
        "stochastic sandpile: stabilization, carpet/hole dynamics, "
        "single-block chains, the staged bootstrap, and the "
        "verification suite.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd in COMMANDS:
        p = sub.add_parser(cmd, help=f"run the {cmd} experiment")
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, help="master seed (64-bit)")
        p.add_argument("--replicas", type=int, help="number of replica workers")
        p.add_argument("--out", help="output path (default: stdout)")
        p.add_argument("--format", choices=["csv", "jsonl"], help="output format")
        p.add_argument("--threads", type=int, help="parallel workers "
                       "(default: SANDPILE_LAB_THREADS or the cpu count)")
        for key, (tag, default) in _SCHEMAS[cmd].items():
            kw = {}
            if tag == "int":
                kw["type"] = int
            elif tag == "float":
                kw["type"] = float
            p.add_argument(f"--{key.replace('_', '-')}", dest=key,
                           help=f"{cmd} parameter (default {default!r})", **kw)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    config_file = args.pop("config", None)
    out_path = args.pop("out", None)
    overrides = {k: v for k, v in args.items() if v is not None}
    if "windows" in overrides and isinstance(overrides["windows"], str):
        pass  # coerced downstream
    try:
        report = run_command(command, overrides, config_file)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    fmt = report.config.get("format", "csv")
    text = report.serialize(fmt)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    print(
        f"{command}: {len(report.rows)} rows, "
        f"{report.invariant_violations} invariant violations, "
        f"{len(report.checks_failed)} failed checks, "
        f"{report.wall_time:.2f}s",
        file=sys.stderr,
    )
    if report.checks_failed:
        for name in report.checks_failed:
            print(f"  failed: {name}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
