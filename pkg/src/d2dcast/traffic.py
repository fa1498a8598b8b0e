"""Vehicle arrival/mobility process, content request process, load formulas.

Vehicles enter a straight street from both ends as a Poisson process, travel
at a constant per-vehicle speed drawn uniformly, and leave at the far end.
Each vehicle issues content requests as an independent Poisson process with
Zipf-distributed content popularity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import SimConfig


@dataclass
class Vehicle:
    """Constant-speed vehicle on the street; position is exact at any time."""

    vid: int
    entry_time: float
    entry_x: float        # 0 or roi_length
    direction: int        # +1 rightward, -1 leftward
    speed: float          # m/s
    lateral: float        # fixed cross-street offset

    def position(self, t: float) -> tuple[float, float]:
        return self.entry_x + self.direction * self.speed * (t - self.entry_time), self.lateral

    def inside(self, t: float, roi_length: float) -> bool:
        x = self.position(t)[0]
        return 0.0 <= x <= roi_length


def draw_vehicle(vid: int, t: float, cfg: SimConfig, arrivals_rng, speeds_rng) -> Vehicle:
    """Entry end from the arrivals stream; speed and lateral from the speeds stream."""
    from_left = arrivals_rng.random() < 0.5
    speed = speeds_rng.uniform(cfg.speed_min_mps, cfg.speed_max_mps)
    lateral = speeds_rng.uniform(0.0, cfg.roi_width_m)
    return Vehicle(vid=vid, entry_time=t,
                   entry_x=0.0 if from_left else cfg.roi_length_m,
                   direction=1 if from_left else -1,
                   speed=speed, lateral=lateral)


def draw_prepopulated(vid: int, cfg: SimConfig, arrivals_rng, speeds_rng) -> Vehicle:
    """A vehicle already on the street at t=0, uniform position."""
    x = arrivals_rng.uniform(0.0, cfg.roi_length_m)
    from_left = arrivals_rng.random() < 0.5
    speed = speeds_rng.uniform(cfg.speed_min_mps, cfg.speed_max_mps)
    lateral = speeds_rng.uniform(0.0, cfg.roi_width_m)
    return Vehicle(vid=vid, entry_time=0.0, entry_x=x,
                   direction=1 if from_left else -1, speed=speed, lateral=lateral)


class ZipfCatalog:
    """Zipf(alpha) content popularity: p(k) proportional to k**(-alpha).

    A finite catalog uses the normalized generalized-harmonic weights and
    inverse-CDF sampling.  ``size=0`` selects an unbounded catalog (requires
    alpha > 1), sampled by rejection.
    """

    def __init__(self, size: int, alpha: float):
        self.size = int(size)
        self.alpha = float(alpha)
        if self.size > 0:
            weights = np.arange(1, self.size + 1, dtype=float) ** -self.alpha
            self.pmf = weights / weights.sum()
            self.cdf = np.cumsum(self.pmf)
            self.cdf[-1] = 1.0
        elif self.alpha <= 1.0:
            raise ValueError("unbounded catalog requires alpha > 1")

    def probability(self, k: int) -> float:
        if self.size > 0:
            return float(self.pmf[k - 1])
        from scipy.special import zeta
        return k ** -self.alpha / zeta(self.alpha)

    def draw(self, rng: np.random.Generator) -> int:
        if self.size > 0:
            return int(np.searchsorted(self.cdf, rng.random(), side="right")) + 1
        # rejection sampler for the unbounded law (Devroye)
        b = 2.0 ** (self.alpha - 1.0)
        while True:
            u, v = rng.random(), rng.random()
            x = math.floor(u ** (-1.0 / (self.alpha - 1.0)))
            t = (1.0 + 1.0 / x) ** (self.alpha - 1.0)
            if v * x * (t - 1.0) / (b - 1.0) <= t / b:
                return int(x)


# ---- analytical load formulas --------------------------------------------------


def vehicle_density(vehicle_rate_per_s: float, v_min: float, v_max: float) -> float:
    """Steady-state linear vehicle density in vehicles per meter.

    With uniform speeds, the expected residence time per meter is the mean of
    1/v, giving rate * ln(v_max/v_min)/(v_max - v_min); the equal-speed limit
    follows by continuity.
    """
    if v_min <= 0 or v_max < v_min:
        raise ValueError("need 0 < v_min <= v_max")
    if v_max == v_min:
        return vehicle_rate_per_s / v_min
    return vehicle_rate_per_s * math.log(v_max / v_min) / (v_max - v_min)


def offered_load_density(cfg: SimConfig, gamma_nr: float = 1.0) -> float:
    """Offered traffic load density in kbps per meter of street.

    Product of per-vehicle request rate, vehicle density, coded content size,
    and optionally the fraction of non-repeated requests (gamma_nr).  The
    default gamma_nr=1 returns the raw offered load.
    """
    rho_v = vehicle_density(cfg.vehicle_rate_per_s, cfg.speed_min_mps, cfg.speed_max_mps)
    coded_kbit = cfg.payload_bits / cfg.fec_rate / 1000.0
    return cfg.request_rate_per_s * rho_v * coded_kbit * gamma_nr


def max_i2d_load_density(bandwidth_hz: float, spectral_efficiency: float,
                         cell_diameter_m: float) -> float:
    """Capacity density (kbps/m) of a linear cell deployment with 1/3 reuse."""
    if bandwidth_hz <= 0 or spectral_efficiency <= 0 or cell_diameter_m <= 0:
        raise ValueError("arguments must be positive")
    return bandwidth_hz * spectral_efficiency / 3.0 / cell_diameter_m / 1000.0
