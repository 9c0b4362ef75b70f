"""Command-line entry point.

    bae-explain run <config> --out DIR [--seed N] [--jobs N]
    bae-explain synth <config> --out CUBE
    bae-explain report <records-dir> --out DIR
    bae-explain compare <records-dir>... --metric seqi --out DIR
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .compare import cd_diagram_svg, summary_json
from .config import ConfigError, load_config
from .cube import SensorCube
from .experiment import load_records, run_experiment, write_records
from .pipeline import synth_drift, write_binary_cube, write_csv_cube
from .report import METRICS, emit_report, rank_summary

log = logging.getLogger("bae_explain")


def cmd_run(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    result = run_experiment(config, jobs=args.jobs)
    rec_dir = write_records(result, args.out)
    print(f"{len(result.records)} records written to {rec_dir}")
    for failure in result.failures:
        where = f" (sensor {failure['sensor']})" if "sensor" in failure else ""
        print(f"failed: {failure['configuration']}{where}: {failure['error']}", file=sys.stderr)
    return 0 if result.records or not result.failures else 1


def cmd_synth(args) -> int:
    config = load_config(args.config)
    train, test, drifting = synth_drift(config.synth)
    cube = SensorCube(np.concatenate([train.data, test.data]), train.sensor_names)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.suffix == ".csv":
        write_csv_cube(cube, out)
    else:
        write_binary_cube(cube, out)
    print(json.dumps({
        "path": str(out),
        "shape": list(cube.shape),
        "n_train": train.n_cycles,
        "drifting": list(drifting),
    }))
    return 0


def cmd_report(args) -> int:
    records = load_records(args.records_dir)
    if not records:
        print(f"no records found in {args.records_dir}", file=sys.stderr)
        return 1
    emit_report(records, args.out)
    print(f"report for {len(records)} records written to {args.out}")
    return 0


def cmd_compare(args) -> int:
    records = load_records(*args.records_dirs)
    if not records:
        print("no records found", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = rank_summary(records, args.metric, args.alpha)
    (out / f"compare_{args.metric}.json").write_text(summary_json(summary), encoding="utf-8")
    cd_diagram_svg(summary, out / f"compare_{args.metric}.svg", title=f"average rank ({args.metric})")
    for m, r in zip(summary["methods"], summary["average_ranks"]):
        print(f"{r:6.3f}  {m}")
    if summary.get("note"):
        print(summary["note"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bae-explain", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train, attribute and evaluate one experiment")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("synth", help="write a synthetic drift cube")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", help="tables and figures from saved records")
    p.add_argument("records_dir")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("compare", help="rank methods across record sets")
    p.add_argument("records_dirs", nargs="+")
    p.add_argument("--metric", default="seqi", choices=sorted(METRICS))
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
