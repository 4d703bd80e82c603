"""Command line entry point: ``run``, ``generate`` and ``render``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import DarbouxError
from .report import render_report
from .scenario import EXIT_ERROR, GENERATOR_KINDS, bundled_path, bundled_scenarios, generate_case, run_scenario


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="plbdarboux", description="Darboux charts on towers of normed spaces via the Moser path method.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario and write its report")
    r.add_argument("config", help="scenario JSON, or the name of a bundled scenario")
    r.add_argument("--report", help="output report JSON (default <config stem>.report.json)")
    r.add_argument("--csv", help="optional per-sample CSV")
    r.add_argument("--quiet", action="store_true", help="do not print the summary")

    g = sub.add_parser("generate", help="emit a reproducible scenario document")
    g.add_argument("kind", choices=GENERATOR_KINDS)
    g.add_argument("--dim", type=int, default=2)
    g.add_argument("--depth", type=int, default=3)
    g.add_argument("--epsilon", type=float, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help="write here instead of stdout")

    v = sub.add_parser("render", help="summarize a saved report")
    v.add_argument("report")
    v.add_argument("--format", choices=("text", "csv"), default="text")

    sub.add_parser("list", help="list bundled scenarios")
    return p


def _resolve(config: str) -> Path:
    path = Path(config)
    if path.exists():
        return path
    name = config if config.endswith(".json") else config + ".json"
    return bundled_path(name) if name in bundled_scenarios() else path


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            res = run_scenario(_resolve(args.config), args.report, args.csv)
            if res.error:
                print(f"error: {res.error}", file=sys.stderr)
            elif not args.quiet:
                print(res.report.to_text(), end="")
                print(f"report: {res.report_path}")
            return res.exit_code
        if args.command == "generate":
            text = json.dumps(generate_case(args.kind, args.dim, args.depth, args.epsilon, args.seed), indent=2) + "\n"
            if args.out:
                Path(args.out).write_text(text)
            else:
                sys.stdout.write(text)
            return 0
        if args.command == "render":
            sys.stdout.write(render_report(args.report, args.format))
            return 0
        if args.command == "list":
            print("\n".join(bundled_scenarios()))
            return 0
    except (DarbouxError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
