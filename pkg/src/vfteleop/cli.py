"""Command-line entry point: run experiment matrices, recompute metrics,
or serve a live session to the browser cockpit."""

from __future__ import annotations

import argparse
import sys


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="vfteleop",
        description="Virtual-fixture teleoperation simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run scenario trials headless")
    p_run.add_argument("--scenario", action="append", required=True,
                       help="scenario TOML file (repeatable)")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p_run.add_argument("--gains", help="gain file overriding the defaults")

    p_met = sub.add_parser("metrics", help="recompute metrics from records")
    p_met.add_argument("--in", dest="in_dir", required=True,
                       help="scenario result directory")

    p_srv = sub.add_parser("serve", help="serve a live session over WebSocket")
    p_srv.add_argument("--port", type=int, default=8765)
    p_srv.add_argument("--scenario", required=True, help="scenario TOML file")

    args = parser.parse_args(argv)

    if args.command == "run":
        from .control import load_gains
        from .harness import run_matrix
        from .scenarios import ScenarioError

        gains = load_gains(args.gains) if args.gains else None
        try:
            return run_matrix(args.scenario, args.out, gains=gains, jobs=args.jobs)
        except ScenarioError as e:
            print(f"scenario error: {e}", file=sys.stderr)
            return 2

    if args.command == "metrics":
        from .harness import recompute_metrics
        return recompute_metrics(args.in_dir)

    if args.command == "serve":
        from .server import serve
        serve(args.port, args.scenario)
        return 0

    return 2


if __name__ == "__main__":
    sys.exit(main())
