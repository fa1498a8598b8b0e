"""Physical layer: power control, SNIR, transmission success test, energy.

Per-subcarrier transmit power is set from the nominal (deterministic) link
gain so that a target normalized rate would be met on an ideal flat channel,
then multiplied by a link margin that absorbs shadowing/fading randomness.
A transmission succeeds when the achievable information over the allocated
resource blocks, with per-subcarrier Shannon rate capped at the modulation's
spectral efficiency, covers the payload.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import LinkKind, SimConfig

# Tolerance (bits) when comparing achievable information against the payload:
# absorbs float accumulation over ~1e5 subcarrier terms, far below one bit.
_SUCCESS_TOL_BITS = 0.125


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


def mw_to_dbm(mw: float) -> float:
    if mw <= 0.0:
        return -math.inf
    return 10.0 * math.log10(mw)


def noise_psd_mw_per_hz(noise_psd_dbm_hz: float) -> float:
    return dbm_to_mw(noise_psd_dbm_hz)


def subcarrier_noise_mw(cfg: SimConfig) -> float:
    """Noise power per subcarrier: spacing times noise figure times PSD."""
    return (cfg.subcarrier_spacing_hz * dbm_to_mw(cfg.noise_figure_db)
            * noise_psd_mw_per_hz(cfg.noise_psd_dbm_hz))


def tx_power_per_subcarrier_mw(gain: float, target_rate: float, margin_db: float,
                               sigma2_mw: float) -> float:
    """Per-subcarrier transmit power (mW) for a target rate over gain ``gain``."""
    if gain <= 0.0:
        raise ValueError("link gain must be positive")
    if target_rate < 0.0:
        raise ValueError("target rate must be nonnegative")
    margin = 10.0 ** (margin_db / 10.0)
    return margin * sigma2_mw / gain * (2.0 ** target_rate - 1.0)


def tx_power_per_subcarrier_dbm(gain_db: float, target_rate: float, margin_db: float,
                                sigma2_dbm: float) -> float:
    """Same power in dBm, composed additively in the log domain."""
    if target_rate == 0.0:
        return -math.inf
    return sigma2_dbm - gain_db + 10.0 * math.log10(2.0 ** target_rate - 1.0) + margin_db


def snir(p_mw: float, h2_own, sigma2_mw: float, interferers=()):
    """Signal to noise-plus-interference ratio on one or more subcarriers.

    ``interferers`` is an iterable of (power_mw, h2_cross) pairs; cross terms
    only count links whose allocation overlaps the subcarrier's resource block.
    Accepts scalars or per-subcarrier arrays for the squared magnitudes.
    """
    denom = sigma2_mw
    for p_j, h2_j in interferers:
        denom = denom + p_j * h2_j
    return p_mw * h2_own / denom


def capped_rate(spectral_efficiency: float, snir_value):
    """Per-subcarrier normalized rate: Shannon capacity capped at the modulation."""
    return np.minimum(spectral_efficiency, np.log2(1.0 + snir_value))


def achievable_bits_flat(n_prb: int, cfg: SimConfig, spectral_efficiency: float,
                         snir_value: float) -> float:
    """Closed form of the achievable information on a flat channel."""
    per_sub = min(spectral_efficiency, math.log2(1.0 + snir_value))
    return n_prb * cfg.prb_duration_s * cfg.subcarrier_spacing_hz \
        * cfg.subcarriers_per_prb * per_sub


def transmission_succeeds(achievable_bits: float, payload_bits: float) -> bool:
    return achievable_bits >= payload_bits - _SUCCESS_TOL_BITS


def required_prbs(coded_bits: float, rate: float, cfg: SimConfig) -> int:
    """PRBs needed to carry ``coded_bits`` at a target normalized rate."""
    per_prb = cfg.prb_duration_s * cfg.subcarrier_spacing_hz * cfg.subcarriers_per_prb * rate
    return int(math.ceil(coded_bits / per_prb - 1e-9))


def packet_energy_mj(n_prb: int, n_subcarriers: int, p_subcarrier_mw: float,
                     prb_duration_s: float) -> float:
    """Radiated energy of one transmission attempt (mW times seconds = mJ)."""
    return n_prb * n_subcarriers * p_subcarrier_mw * prb_duration_s


@dataclass
class Packet:
    """One content transmission: a request served over a specific link.

    The per-CI scheduler assigns the target rate (and hence the PRB count) on
    every attempt; failed attempts re-enter the next interval's candidate set.
    """

    pid: int
    kind: LinkKind
    request_key: tuple          # (receiver id, content id)
    request_seq: int
    tx_key: int                 # transmitter entity key (vehicle id or BS key)
    rx_key: int
    payload_bits: float
    coded_bits: float
    bs_id: int | None = None    # serving BS index for infrastructure packets
    attempts: int = 0
    energy_mj: float = field(default=0.0)
