"""Six wireless channel models over a discretized street grid.

Deterministic path loss comes in three flavors (free-space decay, exponent-3
decay above a close-in distance, dual-slope urban loss with a breakpoint).
Stochastic layers add, in order: spatially correlated lognormal shadowing,
flat Rician small-scale fading with spatially correlated K-factors, and a
frequency-selective transfer function built from a random multipath profile
and evaluated at every subcarrier.

All deterministic quantities are computed between grid-snapped positions
(5 m step by default).  The distance-only "nominal" gain used for neighbor
ranking always comes from the dual-slope model, independent of the model the
simulation is running, so ranking decisions are identical across models.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .config import ChannelModel, ChannelParams, LinkKind, SimConfig

_C = 299_792_458.0


def friis_constant(carrier_freq_hz: float) -> float:
    """Free-space constant K such that Prx = K * Ptx / d**2."""
    return (_C / (4.0 * math.pi * carrier_freq_hz)) ** 2


@dataclass
class PathLossParams:
    """Inputs of the deterministic path-loss curves for one link kind."""

    model: ChannelModel
    link_kind: LinkKind
    carrier_freq_hz: float = 2.0e9
    close_in_m: float = 10.0          # exponent-3 model reference distance
    breakpoint_m: float = 60.0        # dual-slope model breakpoint
    intercept_db: float = 28.0
    near_db_per_decade: float = 22.0
    far_db_per_decade: float = 40.0
    tx_height_m: float = 1.5
    rx_height_m: float = 1.5
    min_distance_m: float = 1.0

    @classmethod
    def from_config(cls, cfg: SimConfig, model: ChannelModel, kind: LinkKind) -> "PathLossParams":
        ch = cfg.channel
        kind = LinkKind(kind)
        return cls(
            model=ChannelModel(model), link_kind=kind,
            carrier_freq_hz=ch.carrier_freq_hz, close_in_m=ch.m2_close_in_m,
            breakpoint_m=ch.breakpoint_m(kind), intercept_db=ch.dual_slope_intercept_db,
            near_db_per_decade=ch.dual_slope_near_db_per_decade,
            far_db_per_decade=ch.dual_slope_far_db_per_decade,
            tx_height_m=cfg.bs_height_m if kind == LinkKind.I2D else cfg.device_height_m,
            rx_height_m=cfg.device_height_m, min_distance_m=ch.min_distance_m,
        )


def _free_space_db(d, carrier_freq_hz):
    return -10.0 * np.log10(friis_constant(carrier_freq_hz)) + 20.0 * np.log10(d)


def _close_in_db(d, carrier_freq_hz, d0):
    below = _free_space_db(np.minimum(d, d0), carrier_freq_hz)
    above = _free_space_db(d0, carrier_freq_hz) + 30.0 * np.log10(np.maximum(d, d0) / d0)
    return np.where(d <= d0, below, above)


def _dual_slope_db(d, p: PathLossParams):
    f_ghz = p.carrier_freq_hz / 1e9
    near = p.intercept_db + p.near_db_per_decade * np.log10(np.minimum(d, p.breakpoint_m)) \
        + 20.0 * np.log10(f_ghz)
    at_bp = p.intercept_db + p.near_db_per_decade * np.log10(p.breakpoint_m) \
        + 20.0 * np.log10(f_ghz)
    far = at_bp + p.far_db_per_decade * np.log10(np.maximum(d, p.breakpoint_m) / p.breakpoint_m)
    return np.where(d <= p.breakpoint_m, near, far)


def path_loss_db(params: PathLossParams, distance_m):
    """Deterministic path loss in dB at the given (3D) distance.

    Distances are clamped below ``min_distance_m``; nonpositive distances are a
    domain error.  Models M4..M6 share the dual-slope deterministic part.
    """
    d = np.asarray(distance_m, dtype=float)
    if np.any(d <= 0.0):
        raise ValueError("path loss requires a positive distance")
    d = np.maximum(d, params.min_distance_m)
    model = ChannelModel(params.model)
    if model == ChannelModel.M1:
        out = _free_space_db(d, params.carrier_freq_hz)
    elif model == ChannelModel.M2:
        out = _close_in_db(d, params.carrier_freq_hz, params.close_in_m)
    else:
        out = _dual_slope_db(d, params)
    return out if out.shape else float(out)


class PathLossTable:
    """Grid-snapped deterministic path loss and gains over the street.

    Endpoints snap to the nearest grid point before any distance computation;
    results are memoized on (model, kind, squared grid distance), which is
    exact because snapped coordinates are integer multiples of the step.
    """

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.step = cfg.channel.grid_step_m
        self.nx = int(round(cfg.roi_length_m / self.step)) + 1
        self.ny = int(round(cfg.roi_width_m / self.step)) + 1
        self._params = {
            (model, kind): PathLossParams.from_config(cfg, model, kind)
            for model in ChannelModel for kind in LinkKind
        }
        self._dh = {
            LinkKind.I2D: cfg.bs_height_m - cfg.device_height_m,
            LinkKind.D2D: 0.0,
        }
        self._cache: dict = {}

    # -- geometry -------------------------------------------------------------

    def snap_index(self, xy) -> tuple[int, int]:
        ix = min(max(int(round(xy[0] / self.step)), 0), self.nx - 1)
        iy = min(max(int(round(xy[1] / self.step)), 0), self.ny - 1)
        return ix, iy

    def snap(self, xy) -> tuple[float, float]:
        ix, iy = self.snap_index(xy)
        return ix * self.step, iy * self.step

    # -- path loss ------------------------------------------------------------

    def pl_db(self, model: ChannelModel, kind: LinkKind, a_xy, b_xy) -> float:
        ia = self.snap_index(a_xy)
        ib = self.snap_index(b_xy)
        d2sq = (ia[0] - ib[0]) ** 2 + (ia[1] - ib[1]) ** 2  # in grid-step units
        key = (int(model), kind, d2sq)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        dh = self._dh[LinkKind(kind)]
        d3 = math.sqrt(d2sq * self.step * self.step + dh * dh)
        d3 = max(d3, self.cfg.channel.min_distance_m)
        val = float(path_loss_db(self._params[(ChannelModel(model), LinkKind(kind))], d3))
        self._cache[key] = val
        return val

    def det_gain(self, model: ChannelModel, kind: LinkKind, a_xy, b_xy) -> float:
        return 10.0 ** (-self.pl_db(model, kind, a_xy, b_xy) / 10.0)

    def nominal_gain(self, a_xy, b_xy) -> float:
        """Distance-only ranking gain: dual-slope, device-to-device heights."""
        return self.det_gain(ChannelModel.M3, LinkKind.D2D, a_xy, b_xy)

    def nominal_gain_matrix(self, positions: np.ndarray) -> np.ndarray:
        """Pairwise nominal gain for device positions, shape (n, n)."""
        snapped = np.round(np.asarray(positions, dtype=float) / self.step) * self.step
        dx = snapped[:, None, 0] - snapped[None, :, 0]
        dy = snapped[:, None, 1] - snapped[None, :, 1]
        d = np.hypot(dx, dy)
        d = np.maximum(d, self.cfg.channel.min_distance_m)
        pl = _dual_slope_db(d, self._params[(ChannelModel.M3, LinkKind.D2D)])
        return 10.0 ** (-pl / 10.0)

    # -- persistence ----------------------------------------------------------

    def content_hash(self) -> str:
        ch = self.cfg.channel
        meta = (self.cfg.roi_length_m, self.cfg.roi_width_m, self.step,
                self.cfg.bs_height_m, self.cfg.device_height_m,
                ch.carrier_freq_hz, ch.m2_close_in_m, ch.d2d_breakpoint_m,
                ch.i2d_breakpoint_m, ch.dual_slope_intercept_db,
                ch.dual_slope_near_db_per_decade, ch.dual_slope_far_db_per_decade,
                ch.min_distance_m)
        return hashlib.sha256(repr(meta).encode()).hexdigest()[:16]

    def dump(self, path) -> None:
        keys = np.array([(int(m), 0 if k == LinkKind.I2D else 1, d) for (m, k, d) in self._cache],
                        dtype=np.int64).reshape(-1, 3)
        vals = np.array(list(self._cache.values()), dtype=float)
        np.savez(path, keys=keys, vals=vals, meta=self.content_hash())

    def load(self, path) -> bool:
        data = np.load(path, allow_pickle=False)
        if str(data["meta"]) != self.content_hash():
            return False
        for (m, k, d), v in zip(data["keys"], data["vals"]):
            kind = LinkKind.I2D if k == 0 else LinkKind.D2D
            self._cache[(int(m), kind, int(d))] = float(v)
        return True


# ---- spatially correlated large-scale parameter fields -----------------------


def correlated_field(nx: int, ny: int, step_m: float, corr_dist_m: float,
                     rng: np.random.Generator) -> np.ndarray:
    """Unit-variance Gaussian field with exponential spatial autocorrelation.

    Spectral synthesis: white noise is shaped in the frequency domain by the
    square root of the power spectral density of exp(-r/delta), on a grid
    padded by several correlation lengths to suppress wraparound.  The filter
    is normalized so the marginal variance is exactly one.
    """
    if corr_dist_m <= step_m * 1e-6:
        return rng.standard_normal((nx, ny))
    pad = int(math.ceil(4.0 * corr_dist_m / step_m))
    px, py = nx + 2 * pad, ny + 2 * pad
    white = rng.standard_normal((px, py))
    fx = np.fft.fftfreq(px, d=step_m)
    fy = np.fft.fftfreq(py, d=step_m)
    f2 = fx[:, None] ** 2 + fy[None, :] ** 2
    psd = (1.0 + (2.0 * math.pi * corr_dist_m) ** 2 * f2) ** -1.5
    amp = np.sqrt(psd)
    amp *= math.sqrt(px * py / float(np.sum(amp * amp)))
    shaped = np.fft.ifft2(np.fft.fft2(white) * amp).real
    return shaped[pad:pad + nx, pad:pad + ny]


@dataclass
class LspFields:
    """Per-grid-point large-scale parameter fields.

    ``shadow_norm`` and ``k_norm`` are unit-variance correlated fields; link
    values combine the two endpoints so that links sharing an endpoint are
    correlated while the marginal stays Gaussian with the configured spread.
    """

    shadow_norm: np.ndarray
    k_norm: np.ndarray
    shadowing_sigma_db: float
    k_mean_db: float
    k_sigma_db: float

    def link_shadow_db(self, ia, ib) -> float:
        z = (self.shadow_norm[ia] + self.shadow_norm[ib]) / math.sqrt(2.0)
        return float(z * self.shadowing_sigma_db)

    def link_k_db(self, ia, ib) -> float:
        z = (self.k_norm[ia] + self.k_norm[ib]) / math.sqrt(2.0)
        return float(self.k_mean_db + z * self.k_sigma_db)


def generate_lsp_fields(nx: int, ny: int, params: ChannelParams,
                        rng: np.random.Generator) -> LspFields:
    """Draw the shadowing and K-factor fields for one replication."""
    shadow = correlated_field(nx, ny, params.grid_step_m, params.shadowing_corr_dist_m, rng)
    k_indep = correlated_field(nx, ny, params.grid_step_m, params.k_factor_corr_dist_m, rng)
    rho = params.shadow_k_cross_corr
    k_field = rho * shadow + math.sqrt(max(0.0, 1.0 - rho * rho)) * k_indep
    return LspFields(shadow_norm=shadow, k_norm=k_field,
                     shadowing_sigma_db=params.shadowing_sigma_db,
                     k_mean_db=params.k_factor_mean_db,
                     k_sigma_db=params.k_factor_sigma_db)


# ---- small-scale fading draws -------------------------------------------------


def rician_flat_power(rng: np.random.Generator, k_lin: float, size=None):
    """Unit-mean squared magnitude of a flat Rician channel."""
    los = math.sqrt(k_lin / (k_lin + 1.0))
    sigma = math.sqrt(1.0 / (2.0 * (k_lin + 1.0)))
    re = los + sigma * rng.standard_normal(size)
    im = sigma * rng.standard_normal(size)
    return re * re + im * im


def draw_multipath_profile(rng: np.random.Generator, k_lin: float, delay_spread_s: float,
                           n_paths: int, delay_scaling: float, per_path_shadow_db: float):
    """Draw one multipath profile: (LOS amplitude, path coefficients, delays).

    Path delays follow an exponential law scaled by the delay spread; path
    powers follow the matching exponential profile with per-path lognormal
    perturbation, normalized to carry all scattered power.  Per-path complex
    gains are Gaussian (each path aggregates many unresolved micro-paths), so
    the single-frequency marginal is exactly Rician for any delay spread.
    """
    r = delay_scaling
    u = rng.random(n_paths)
    tau = -r * delay_spread_s * np.log(u)
    tau.sort()
    tau -= tau[0]
    shadow = rng.standard_normal(n_paths) * per_path_shadow_db
    if delay_spread_s > 0.0:
        w = np.exp(-tau * (r - 1.0) / (r * delay_spread_s)) * 10.0 ** (-shadow / 10.0)
    else:
        w = 10.0 ** (-shadow / 10.0)
    w /= w.sum()
    scale = np.sqrt(w / (k_lin + 1.0))
    coeff = scale * (rng.standard_normal(n_paths)
                     + 1j * rng.standard_normal(n_paths)) / math.sqrt(2.0)
    los_amp = math.sqrt(k_lin / (k_lin + 1.0))
    return los_amp, coeff, tau


def transfer_h2(los_amp: float, coeff: np.ndarray, tau: np.ndarray,
                freqs_hz: np.ndarray) -> np.ndarray:
    """|H(f)|^2 of a multipath profile at the given frequencies."""
    phases = np.exp(-2j * math.pi * np.outer(tau, freqs_hz))
    h = los_amp + coeff @ phases
    return np.abs(h) ** 2


def multipath_transfer(rng: np.random.Generator, k_lin: float, delay_spread_s: float,
                       freqs_hz: np.ndarray, n_paths: int, delay_scaling: float,
                       per_path_shadow_db: float):
    """One draw of |H(f)|^2 at the given frequencies, unit mean over fading.

    Returns (h2, coefficients, delays).
    """
    los_amp, coeff, tau = draw_multipath_profile(rng, k_lin, delay_spread_s, n_paths,
                                                 delay_scaling, per_path_shadow_db)
    return transfer_h2(los_amp, coeff, tau, freqs_hz), coeff, tau


# ---- per-link channel realizations --------------------------------------------


@dataclass
class ChannelRealization:
    """Composite squared channel magnitudes for one link, one control interval.

    ``h2`` is either a scalar (flat models) or one value per subcarrier across
    the system band, indexed frequency-major (block index times subcarriers
    per block); for the frequency-selective model the vector is materialized
    lazily per block from the stored multipath profile.  ``det_gain`` is the
    deterministic gain of the active model and ``large_gain`` additionally
    includes shadowing; the fading layer has unit mean, so averaging ``h2``
    over draws recovers ``large_gain``.
    """

    det_gain: float
    large_gain: float
    flat: bool
    h2_flat: float | None = None
    paths: tuple | None = None            # (los_amp, coefficients, delays)
    freqs_hz: np.ndarray | None = None
    _blocks: dict = field(default_factory=dict, repr=False)

    @property
    def h2(self):
        if self.flat:
            return self.h2_flat
        los, coeff, tau = self.paths
        return self.large_gain * transfer_h2(los, coeff, tau, self.freqs_hz)

    def h2_block(self, block: int, n_c: int):
        """Per-subcarrier values for one frequency block (scalar if flat)."""
        if self.flat:
            return self.h2_flat
        hit = self._blocks.get(block)
        if hit is None:
            los, coeff, tau = self.paths
            hit = self.large_gain * transfer_h2(
                los, coeff, tau, self.freqs_hz[block * n_c:(block + 1) * n_c])
            self._blocks[block] = hit
        return hit

    def mean_h2(self) -> float:
        return float(self.h2_flat) if self.flat else float(np.mean(self.h2))


class ChannelSampler:
    """Draws per-(link, control interval) channel realizations.

    Fading uses counter-based streams keyed on (interval, endpoints), so
    realizations are independent across intervals and reproducible regardless
    of evaluation order.  The delay spread is a per-link draw that stays fixed
    for the lifetime of the pair, as a slowly varying large-scale parameter.
    """

    def __init__(self, cfg: SimConfig, table: PathLossTable, lsp: LspFields | None, streams):
        self.cfg = cfg
        self.table = table
        self.lsp = lsp
        self.streams = streams
        n_sub = cfg.n_freq_blocks * cfg.subcarriers_per_prb
        self.freqs_hz = np.arange(n_sub) * cfg.subcarrier_spacing_hz

    def _delay_spread(self, kind: LinkKind, tx_key: int, rx_key: int) -> float:
        mu, sigma = self.cfg.channel.delay_spread_log10(kind)
        z = self.streams.delay_spread_stream(tx_key, rx_key).standard_normal()
        return 10.0 ** (mu + sigma * z)

    def realization(self, model: ChannelModel, kind: LinkKind, tx_xy, rx_xy,
                    ci_index: int, tx_key: int, rx_key: int) -> ChannelRealization:
        model = ChannelModel(model)
        kind = LinkKind(kind)
        det = self.table.det_gain(model, kind, tx_xy, rx_xy)
        if model.deterministic:
            return ChannelRealization(det, det, flat=True, h2_flat=det)
        ia = self.table.snap_index(tx_xy)
        ib = self.table.snap_index(rx_xy)
        large = det * 10.0 ** (self.lsp.link_shadow_db(ia, ib) / 10.0)
        if model == ChannelModel.M4:
            return ChannelRealization(det, large, flat=True, h2_flat=large)
        k_lin = 10.0 ** (self.lsp.link_k_db(ia, ib) / 10.0)
        rng = self.streams.fading_stream(ci_index, tx_key, rx_key)
        if model == ChannelModel.M5:
            h2 = large * float(rician_flat_power(rng, k_lin))
            return ChannelRealization(det, large, flat=True, h2_flat=h2)
        ds = self._delay_spread(kind, tx_key, rx_key)
        ch = self.cfg.channel
        profile = draw_multipath_profile(rng, k_lin, ds, ch.n_scatter_paths,
                                         ch.delay_scaling, ch.per_path_shadow_sigma_db)
        return ChannelRealization(det, large, flat=False, paths=profile,
                                  freqs_hz=self.freqs_hz)
