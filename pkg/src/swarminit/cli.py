"""Command-line entry points: scenario runs, benchmarks, trace replay."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from .pipeline import (
    MaxEpochsExceeded,
    load_config,
    replay_records,
    run_benchmark,
    run_init,
    write_benchmark_csv,
)
from .simulator import load_trace


def _emit_json(payload: dict, out_path) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if out_path is None:
        sys.stdout.write(text)
    else:
        with open(out_path, "w") as f:
            f.write(text)


def _cmd_init(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, world=replace(config.world, seed=args.seed))
    try:
        report = run_init(config, trace_path=args.trace)
    except MaxEpochsExceeded as exc:
        _emit_json(exc.report.to_json_dict(), args.out)
        print(f"init did not converge: {exc}", file=sys.stderr)
        return 3
    _emit_json(report.to_json_dict(), args.out)
    return 0


def _cmd_bench(args) -> int:
    config = load_config(args.config)
    rows = run_benchmark(config)
    write_benchmark_csv(rows, args.out)
    return 0


def _cmd_replay(args) -> int:
    records = load_trace(args.trace)
    summary = replay_records(records, sigma=args.sigma)
    _emit_json(summary, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swarminit",
        description="Relative pose initialization for drone swarms "
        "from anonymous mutual observations (simulation harness).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_init = sub.add_parser("init", help="run the initialization loop")
    p_init.add_argument("--config", required=True, help="scenario JSON path")
    p_init.add_argument("--seed", type=int, default=None,
                        help="override world.seed from the config")
    p_init.add_argument("--out", default=None,
                        help="write the run report JSON here (default stdout)")
    p_init.add_argument("--trace", default=None,
                        help="dump the epoch records as JSON Lines here")
    p_init.set_defaults(func=_cmd_init)

    p_bench = sub.add_parser("bench", help="run the method benchmark grid")
    p_bench.add_argument("--config", required=True, help="scenario JSON path")
    p_bench.add_argument("--out", required=True, help="CSV output path")
    p_bench.set_defaults(func=_cmd_bench)

    p_replay = sub.add_parser("replay", help="re-solve a dumped epoch trace")
    p_replay.add_argument("--trace", required=True, help="JSON Lines trace path")
    p_replay.add_argument("--sigma", type=float, default=0.0,
                          help="observation noise used for the match gate")
    p_replay.add_argument("--out", default=None,
                          help="write the summary JSON here (default stdout)")
    p_replay.set_defaults(func=_cmd_replay)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
