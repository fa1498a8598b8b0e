"""Per-replication metrics record and its CSV projection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields


@dataclass
class MetricsRecord:
    """Aggregated outcome of one replication.

    Request-level counters cover only requests issued inside the measurement
    window (after warm-up, early enough to resolve before the run ends);
    interval-level quantities (energy, spectrum) cover the window's control
    intervals.  ``d2d_served_seqs`` lists the request sequence numbers served
    device-to-device; it supports cross-model set comparisons and is excluded
    from the flat CSV row.
    """

    seed: int = 0
    scenario: str = ""
    channel_model: str = ""
    mode: str = ""
    speed_min_mps: float = 0.0
    speed_max_mps: float = 0.0

    requests_total: int = 0
    requests_repeat: int = 0
    delivered_d2d: int = 0
    delivered_i2d: int = 0
    cancelled: int = 0

    attempts: int = 0
    failed_attempts: int = 0
    pruned_postponements: int = 0
    dropped_packets: int = 0
    handovers: int = 0

    energy_mj: float = 0.0
    spectrum_occupation: float = 0.0
    mean_latency_s: float = 0.0
    mean_vehicle_density: float = 0.0

    d2d_served_seqs: tuple = field(default=(), repr=False)

    # paired-benchmark deltas, filled by the sweep harness
    energy_saving_pct: float | None = None
    spectrum_saving_pct: float | None = None

    @property
    def delivered(self) -> int:
        return self.delivered_d2d + self.delivered_i2d

    @property
    def unresolved(self) -> int:
        return (self.requests_total - self.requests_repeat
                - self.delivered - self.cancelled)

    @property
    def offloading_efficiency(self) -> float:
        return self.delivered_d2d / self.delivered if self.delivered else 0.0

    @property
    def energy_per_content_mj(self) -> float:
        return self.energy_mj / self.delivered if self.delivered else 0.0

    @property
    def gamma_nr(self) -> float:
        if self.requests_total == 0:
            return math.nan
        return 1.0 - self.requests_repeat / self.requests_total

    @property
    def failure_rate(self) -> float:
        return self.failed_attempts / self.attempts if self.attempts else 0.0

    def to_row(self) -> dict:
        row = {}
        for f in fields(self):
            if f.name == "d2d_served_seqs":
                continue
            row[f.name] = getattr(self, f.name)
        for name in ("delivered", "unresolved", "offloading_efficiency",
                     "energy_per_content_mj", "gamma_nr", "failure_rate"):
            row[name] = getattr(self, name)
        return row


CSV_COLUMNS = [f.name for f in fields(MetricsRecord) if f.name != "d2d_served_seqs"] + [
    "delivered", "unresolved", "offloading_efficiency", "energy_per_content_mj",
    "gamma_nr", "failure_rate",
]
