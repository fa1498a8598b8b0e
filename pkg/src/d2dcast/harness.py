"""Experiment orchestration: sweeps, paired benchmarks, aggregation, emission.

A sweep cell is one (scenario, channel model, speed range).  Every cell runs R
offloading replications and R benchmark replications on the same seeds, so the
vehicle arrival and request processes are identical within a pair and savings
are computed replication-by-replication.  Cell summaries carry Student-t 95%
confidence intervals over replications.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .calibration import CalibrationTable, build_table
from .config import ChannelModel, Mode, Scenario, SimConfig
from .engine import run_replication
from .metrics import CSV_COLUMNS, MetricsRecord

SPEED_RANGES = ((6.0, 16.0), (9.0, 24.0), (12.0, 32.0))


@dataclass
class SweepSpec:
    scenarios: tuple = (Scenario.A_UMI, Scenario.B_UMA)
    models: tuple = tuple(ChannelModel)
    speed_ranges: tuple = SPEED_RANGES
    replications: int = 5
    base_seed: int = 1

    def cells(self):
        for scenario in self.scenarios:
            for model in self.models:
                for speeds in self.speed_ranges:
                    yield Scenario(scenario), ChannelModel(model), tuple(speeds)


def aggregate(values) -> tuple[float, float | None]:
    """Mean and 95% confidence half-width (Student t over replications).

    A single value has no interval; the mean is returned with a warning.
    """
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError("aggregate requires at least one value")
    mean = float(np.mean(vals))
    if len(vals) < 2:
        warnings.warn("confidence interval undefined for a single replication")
        return mean, None
    sd = float(np.std(vals, ddof=1))
    half = float(stats.t.ppf(0.975, len(vals) - 1)) * sd / math.sqrt(len(vals))
    return mean, half


def replicate(cfg: SimConfig, seed: int, table: CalibrationTable) -> MetricsRecord:
    """One replication with margins resolved from the calibration table."""
    resolved = cfg.resolved()
    margin_i2d = resolved.link_margin_i2d_db
    margin_d2d = resolved.link_margin_d2d_db
    if margin_i2d is None:
        margin_i2d = table.margin_for(resolved.channel_model, resolved.scenario, "i2d")
    if margin_d2d is None:
        margin_d2d = table.margin_for(resolved.channel_model, resolved.scenario, "d2d")
    return run_replication(resolved, seed=seed, margin_i2d_db=margin_i2d,
                           margin_d2d_db=margin_d2d)


def run_cell(cfg: SimConfig, table: CalibrationTable, replications: int,
             base_seed: int):
    """Paired offloading/benchmark replications for one sweep cell."""
    offload, bench = [], []
    for r in range(replications):
        seed = base_seed + r
        off_cfg = dataclasses.replace(cfg, mode=Mode.OFFLOADING)
        ben_cfg = dataclasses.replace(cfg, mode=Mode.BENCHMARK_I2D_ONLY)
        off = replicate(off_cfg, seed, table)
        ben = replicate(ben_cfg, seed, table)
        if ben.energy_per_content_mj > 0:
            off.energy_saving_pct = 100.0 * (ben.energy_per_content_mj
                                             - off.energy_per_content_mj) \
                / ben.energy_per_content_mj
        if ben.spectrum_occupation > 0:
            off.spectrum_saving_pct = 100.0 * (ben.spectrum_occupation
                                               - off.spectrum_occupation) \
                / ben.spectrum_occupation
        offload.append(off)
        bench.append(ben)
    return offload, bench


_CELL_METRICS = [
    ("offloading_efficiency", "offload", "offloading_efficiency"),
    ("energy_per_content_mj_offloading", "offload", "energy_per_content_mj"),
    ("energy_per_content_mj_benchmark", "bench", "energy_per_content_mj"),
    ("spectrum_occupation_offloading", "offload", "spectrum_occupation"),
    ("spectrum_occupation_benchmark", "bench", "spectrum_occupation"),
    ("energy_saving_pct", "offload", "energy_saving_pct"),
    ("spectrum_saving_pct", "offload", "spectrum_saving_pct"),
    ("gamma_nr", "offload", "gamma_nr"),
    ("mean_latency_s_offloading", "offload", "mean_latency_s"),
    ("failure_rate_offloading", "offload", "failure_rate"),
    ("benchmark_offloading_efficiency", "bench", "offloading_efficiency"),
]


def run_sweep(spec: SweepSpec, base_cfg: SimConfig, table: CalibrationTable,
              out_dir, progress=None):
    """Run every sweep cell; returns (summary_rows, raw_records) and writes files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary_rows = []
    raw_records = []
    for scenario, model, speeds in spec.cells():
        cfg = dataclasses.replace(base_cfg, scenario=scenario, channel_model=model,
                                  speed_min_mps=speeds[0], speed_max_mps=speeds[1])
        offload, bench = run_cell(cfg, table, spec.replications, spec.base_seed)
        raw_records.extend(offload)
        raw_records.extend(bench)
        groups = {"offload": offload, "bench": bench}
        for metric, group, attr in _CELL_METRICS:
            vals = [getattr(r, attr) for r in groups[group]]
            vals = [v for v in vals if v is not None and not math.isnan(v)]
            if not vals:
                continue
            mean, half = aggregate(vals) if len(vals) > 1 else (vals[0], None)
            summary_rows.append({
                "scenario": scenario.value, "channel_model": model.name,
                "speed_min_mps": speeds[0], "speed_max_mps": speeds[1],
                "metric": metric, "mean": mean,
                "ci_half_width": half if half is not None else "",
                "n": len(vals)})
        if progress:
            eff, _ = aggregate([r.offloading_efficiency for r in offload]) \
                if len(offload) > 1 else (offload[0].offloading_efficiency, None)
            progress(f"{scenario.value} {model.name} {speeds}: "
                     f"offload eff {eff:.3f}")
    write_results(summary_rows, out / "results.csv")
    write_raw(raw_records, out / "replications.csv")
    write_manifest(spec, base_cfg, table, out / "manifest.json")
    return summary_rows, raw_records


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.10g}"
    return str(x)


def write_results(rows, path) -> None:
    cols = ["scenario", "channel_model", "speed_min_mps", "speed_max_mps",
            "metric", "mean", "ci_half_width", "n"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in cols])


def write_raw(records, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            row = rec.to_row()
            writer.writerow([_fmt("" if row[c] is None else row[c]) for c in CSV_COLUMNS])


def write_manifest(spec: SweepSpec | None, cfg: SimConfig, table: CalibrationTable,
                   path, extra=None) -> None:
    resolved = cfg.resolved()
    manifest = {
        "version": __version__,
        "config": resolved.to_dict(),
        "calibration_hash": table.content_hash(),
        "calibration": {f"{ChannelModel(m).name}/{s}/{k}":
                        dataclasses.asdict(e) for (m, s, k), e in sorted(table.entries.items())},
    }
    if spec is not None:
        manifest["sweep"] = {
            "scenarios": [Scenario(s).value for s in spec.scenarios],
            "models": [ChannelModel(m).name for m in spec.models],
            "speed_ranges": [list(s) for s in spec.speed_ranges],
            "replications": spec.replications,
            "seeds": [spec.base_seed + r for r in range(spec.replications)],
        }
    if extra:
        manifest.update(extra)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_results(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
