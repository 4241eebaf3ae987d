"""Command-line entry point.

Subcommands mirror the run modes; each takes a JSON or TOML config path and
optional overrides.  ``diff`` compares two summary.json files.  Exit codes:
0 all checks pass, 1 invariant failure, 2 config error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .harness import ConfigError, ExperimentConfig, MODES, report_diff, run


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="spectrisk",
        description="Spectral-algorithm risk laboratory: theory curves, exact "
        "conditional risks, filter and contour audits.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for mode in MODES:
        p = sub.add_parser(mode, help=f"run a {mode} experiment")
        p.add_argument("config", help="path to a JSON or TOML config file")
        p.add_argument("--seed", type=int, action="append", default=None,
                       help="override config seeds (repeatable)")
        p.add_argument("--out", default=None, help="override output directory")
        p.add_argument("--threads", type=int, default=None, help="worker threads")
    d = sub.add_parser("diff", help="compare two run summaries")
    d.add_argument("summary_a")
    d.add_argument("summary_b")
    d.add_argument("--out", default=None, help="write the comparison JSON here")
    args = parser.parse_args(argv)

    try:
        if args.command == "diff":
            comparison = report_diff(args.summary_a, args.summary_b)
            text = json.dumps(comparison, indent=2, default=float)
            if args.out:
                with open(args.out, "w") as fh:
                    fh.write(text)
            print(text)
            return 0
        cfg = ExperimentConfig.from_file(args.config)
        cfg.mode = args.command
        if args.seed:
            cfg.seeds = args.seed
        if args.out:
            cfg.out = args.out
        if args.threads:
            cfg.threads = args.threads
        cfg.validate()
    except (ValueError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    result = run(cfg)
    verdicts = result.summary.get("verdicts", {})
    for name, ok in verdicts.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    if "error" in result.summary:
        print(f"aborted: {result.summary['error']}", file=sys.stderr)
    print(f"summary: {result.out_dir / 'summary.json'}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
