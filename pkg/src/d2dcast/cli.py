"""Command-line front end: calibrate, run, sweep, report."""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .calibration import CalibrationTable, build_table
from .config import ChannelModel, Scenario, SimConfig, load_config
from .harness import (SPEED_RANGES, SweepSpec, read_results, replicate, run_sweep,
                      write_manifest, write_raw)


def _load(args) -> SimConfig:
    cfg = load_config(args.config) if args.config else SimConfig()
    return cfg


def _get_table(cfg: SimConfig, path: str | None, out_dir: Path, trials: int,
               seed: int) -> CalibrationTable:
    if path and Path(path).exists():
        return CalibrationTable.load_csv(path)
    cached = out_dir / "calibration.csv"
    if cached.exists():
        return CalibrationTable.load_csv(cached)
    print("calibration table missing: running margin calibration", file=sys.stderr)
    table = build_table(cfg, trials=trials, seed=seed,
                        progress=lambda msg: print("  " + msg, file=sys.stderr))
    table.save_csv(cached)
    return table


def cmd_calibrate(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = build_table(cfg, p_out=args.outage, trials=args.trials, seed=args.seed,
                        progress=print)
    table.save_csv(out / "calibration.csv")
    print(f"wrote {out / 'calibration.csv'}")
    return 0


def cmd_run(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = _get_table(cfg, args.calibration, out, args.trials, args.seed)
    rec = replicate(cfg, args.seed, table)
    write_raw([rec], out / "results.csv")
    write_manifest(None, cfg, table, out / "manifest.json",
                   extra={"seed": args.seed})
    print(f"delivered={rec.delivered} offloading_efficiency={rec.offloading_efficiency:.3f} "
          f"energy_per_content_mj={rec.energy_per_content_mj:.3f} "
          f"spectrum={rec.spectrum_occupation:.3f} gamma_nr={rec.gamma_nr:.3f}")
    print(f"wrote {out / 'results.csv'}")
    return 0


def _parse_speeds(text: str):
    ranges = []
    for part in text.split(","):
        lo, hi = part.split(":")
        ranges.append((float(lo), float(hi)))
    return tuple(ranges)


def cmd_sweep(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = _get_table(cfg, args.calibration, out, args.trials, args.seed)
    spec = SweepSpec(
        scenarios=tuple(Scenario(s) for s in args.scenarios.split(",")),
        models=tuple(ChannelModel[m] for m in args.models.split(",")),
        speed_ranges=_parse_speeds(args.speed_ranges),
        replications=args.reps, base_seed=args.seed)
    run_sweep(spec, cfg, table, out, progress=print)
    print(f"wrote {out / 'results.csv'}, {out / 'replications.csv'}, "
          f"{out / 'manifest.json'}")
    return 0


def cmd_report(args) -> int:
    rows = read_results(Path(args.results) / "results.csv")
    problems = []
    print(f"{'scenario':<8} {'model':<6} {'speeds':<12} {'metric':<34} "
          f"{'mean':>12} {'ci':>10}")
    for row in rows:
        speeds = f"[{row['speed_min_mps']},{row['speed_max_mps']}]"
        ci = row["ci_half_width"]
        print(f"{row['scenario']:<8} {row['channel_model']:<6} {speeds:<12} "
              f"{row['metric']:<34} {float(row['mean']):>12.4f} "
              f"{('±' + f'{float(ci):.4f}') if ci else '':>10}")
        metric, mean = row["metric"], float(row["mean"])
        if metric == "benchmark_offloading_efficiency" and mean != 0.0:
            problems.append(f"benchmark offloading efficiency nonzero: {row}")
        if metric == "offloading_efficiency" and not 0.0 <= mean <= 1.0:
            problems.append(f"offloading efficiency out of range: {row}")
    for p in problems:
        print("SELF-CHECK FAILED:", p, file=sys.stderr)
    return 1 if problems else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="d2dcast",
        description="System-level simulator of device-to-device content offloading "
                    "in vehicular networks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="compute link-margin calibration table")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--outage", type=float, default=0.005)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("run", help="run one replication")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--calibration", default=None, help="existing calibration CSV")
    p.add_argument("--trials", type=int, default=10_000)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="scenario x model x speed-range sweep")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--calibration", default=None)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--models", default=",".join(m.name for m in ChannelModel))
    p.add_argument("--scenarios", default="A_UMi,B_UMa")
    p.add_argument("--speed-ranges", dest="speed_ranges",
                   default=",".join(f"{a:g}:{b:g}" for a, b in SPEED_RANGES))
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summarize sweep results with self-checks")
    p.add_argument("--results", required=True, help="directory holding results.csv")
    p.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
