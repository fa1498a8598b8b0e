"""Simulation configuration: schema, per-scenario defaults, validation, INI I/O.

The configuration is a plain dataclass tree.  ``SimConfig.resolved()`` fills
scenario-dependent defaults (cell diameter, antenna heights, delay-spread
statistics) and validates every invariant, collecting all violations into a
single :class:`ConfigError` so a bad file reports everything at once.
"""

from __future__ import annotations

import configparser
import dataclasses
import enum
import math
from dataclasses import dataclass, field, fields


class Scenario(str, enum.Enum):
    """Deployment scenario: urban micro-cell (A) or urban macro-cell (B)."""

    A_UMI = "A_UMi"
    B_UMA = "B_UMa"


class ChannelModel(enum.IntEnum):
    """Channel models in increasing order of fidelity.

    M1  free-space decay, exponent 2
    M2  exponent-3 decay above a close-in distance
    M3  dual-slope urban path loss with breakpoint
    M4  M3 plus spatially correlated lognormal shadowing
    M5  M4 plus flat Rician small-scale fading
    M6  M4 plus frequency-selective Rician fading (per-subcarrier transfer
        function built from a random multipath profile)
    """

    M1 = 1
    M2 = 2
    M3 = 3
    M4 = 4
    M5 = 5
    M6 = 6

    @property
    def deterministic(self) -> bool:
        return self <= ChannelModel.M3


class Mode(str, enum.Enum):
    OFFLOADING = "offloading"
    BENCHMARK_I2D_ONLY = "benchmark_i2d_only"


class LinkKind(str, enum.Enum):
    I2D = "i2d"
    D2D = "d2d"


class ConfigError(ValueError):
    """Raised on validation failure; lists every violated invariant."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))


# Scenario-dependent defaults.  Cell diameters follow from the reuse-1/3
# capacity densities of the two deployments (36 and 21 kbps/m at 10 MHz and
# 4 bps/Hz); antenna heights are the standard micro/macro urban values.
_SCENARIO_DEFAULTS = {
    Scenario.A_UMI: dict(cell_diameter_m=370.0, bs_height_m=10.0,
                         i2d_breakpoint_m=120.0, ds_log10_mean_i2d=-7.20,
                         ds_log10_sigma_i2d=0.40),
    Scenario.B_UMA: dict(cell_diameter_m=635.0, bs_height_m=25.0,
                         i2d_breakpoint_m=320.0, ds_log10_mean_i2d=-6.60,
                         ds_log10_sigma_i2d=0.35),
}


@dataclass
class ChannelParams:
    """Propagation constants shared by all six channel models.

    Dual-slope defaults give 28 + 22*log10(d) + 20*log10(f_GHz) below the
    breakpoint and a 40 dB/decade slope beyond it.  Large-scale parameter
    statistics (shadowing sigma, Rician K, delay spread) are representative
    line-of-sight urban values; all are configurable and echoed in the run
    manifest.
    """

    carrier_freq_hz: float = 2.0e9
    grid_step_m: float = 5.0
    min_distance_m: float = 1.0
    # exponent-3 model: free-space below the close-in distance
    m2_close_in_m: float = 10.0
    # dual-slope model
    dual_slope_intercept_db: float = 28.0
    dual_slope_near_db_per_decade: float = 22.0
    dual_slope_far_db_per_decade: float = 40.0
    d2d_breakpoint_m: float = 60.0
    i2d_breakpoint_m: float | None = None  # scenario default
    # lognormal shadowing field
    shadowing_sigma_db: float = 3.0
    shadowing_corr_dist_m: float = 12.0
    # Rician K-factor field (dB domain)
    k_factor_mean_db: float = 9.0
    k_factor_sigma_db: float = 5.0
    k_factor_corr_dist_m: float = 15.0
    shadow_k_cross_corr: float = 0.5
    # multipath profile for the frequency-selective model
    n_scatter_paths: int = 16
    delay_scaling: float = 3.0           # delay-distribution proportionality factor
    per_path_shadow_sigma_db: float = 3.0
    ds_log10_mean_i2d: float | None = None  # log10(seconds); scenario default
    ds_log10_sigma_i2d: float | None = None
    ds_log10_mean_d2d: float = -7.25
    ds_log10_sigma_d2d: float = 0.30

    def breakpoint_m(self, kind: LinkKind) -> float:
        return self.d2d_breakpoint_m if kind == LinkKind.D2D else self.i2d_breakpoint_m

    def delay_spread_log10(self, kind: LinkKind) -> tuple[float, float]:
        if kind == LinkKind.D2D:
            return self.ds_log10_mean_d2d, self.ds_log10_sigma_d2d
        return self.ds_log10_mean_i2d, self.ds_log10_sigma_i2d


@dataclass
class SimConfig:
    """Full description of one simulation run."""

    scenario: Scenario = Scenario.A_UMI
    channel_model: ChannelModel = ChannelModel.M6
    mode: Mode = Mode.OFFLOADING
    seed: int = 1

    # region of interest: a straight street chunk
    roi_length_m: float = 3000.0
    roi_width_m: float = 20.0
    cell_diameter_m: float | None = None   # scenario default
    bs_height_m: float | None = None       # scenario default
    device_height_m: float = 1.5

    # radio resource grid
    system_bandwidth_hz: float = 9.0e6
    ci_duration_s: float = 1.0
    prb_duration_s: float = 0.5e-3
    prb_bandwidth_hz: float | None = None  # derived: n_c * w_c
    subcarriers_per_prb: int = 12
    subcarrier_spacing_hz: float = 15.0e3

    # transmission model
    noise_psd_dbm_hz: float = -174.0
    noise_figure_db: float = 9.0
    max_spectral_efficiency: float = 4.0       # bps/Hz cap of the modulation set
    d2d_rate_ladder: tuple = (1.0, 2.0, 4.0)   # candidate D2D target rates, ascending
    fec_rate: float = 0.8                      # payload bits / coded bits
    link_margin_i2d_db: float | None = None    # None: take from calibration table
    link_margin_d2d_db: float | None = None
    payload_bits: float = 3_456_000.0          # 432 kB content
    retry_limit: int = 10

    # traffic
    vehicle_rate_per_s: float = 20.0 / 60.0
    request_rate_per_s: float = 6.0 / 60.0
    speed_min_mps: float = 6.0
    speed_max_mps: float = 16.0
    zipf_alpha: float = 1.2
    catalog_size: int = 100                    # 0 means unbounded catalog

    # content delivery protocol
    content_timeout_s: float = 20.0
    sharing_timeout_s: float = 60.0
    neighbor_range_m: float = 100.0

    # run control
    sim_duration_s: float = 300.0
    warmup_s: float = 120.0
    prepopulate: bool = True

    channel: ChannelParams = field(default_factory=ChannelParams)

    # ---- derived quantities -------------------------------------------------

    @property
    def prb_bandwidth(self) -> float:
        if self.prb_bandwidth_hz is not None:
            return self.prb_bandwidth_hz
        return self.subcarriers_per_prb * self.subcarrier_spacing_hz

    @property
    def n_slots_per_ci(self) -> int:
        return int(round(self.ci_duration_s / self.prb_duration_s))

    @property
    def n_freq_blocks(self) -> int:
        return int(round(self.system_bandwidth_hz / self.prb_bandwidth))

    @property
    def n_prb_per_ci(self) -> int:
        return self.n_slots_per_ci * self.n_freq_blocks

    @property
    def coded_bits(self) -> float:
        return self.payload_bits / self.fec_rate

    @property
    def n_bs(self) -> int:
        return max(1, math.ceil(self.roi_length_m / self.cell_diameter_m))

    def bs_positions(self):
        """Base stations evenly spaced on the street axis, mid-width."""
        n = self.n_bs
        spacing = self.roi_length_m / n
        return [((i + 0.5) * spacing, self.roi_width_m / 2.0) for i in range(n)]

    def height_for(self, kind: LinkKind, bs_end: bool) -> float:
        return self.bs_height_m if (kind == LinkKind.I2D and bs_end) else self.device_height_m

    # ---- resolution & validation --------------------------------------------

    def resolved(self) -> "SimConfig":
        """Fill scenario defaults and validate; returns a new config."""
        cfg = dataclasses.replace(self, channel=dataclasses.replace(self.channel))
        defaults = _SCENARIO_DEFAULTS[Scenario(cfg.scenario)]
        if cfg.cell_diameter_m is None:
            cfg.cell_diameter_m = defaults["cell_diameter_m"]
        if cfg.bs_height_m is None:
            cfg.bs_height_m = defaults["bs_height_m"]
        if cfg.channel.i2d_breakpoint_m is None:
            cfg.channel.i2d_breakpoint_m = defaults["i2d_breakpoint_m"]
        if cfg.channel.ds_log10_mean_i2d is None:
            cfg.channel.ds_log10_mean_i2d = defaults["ds_log10_mean_i2d"]
        if cfg.channel.ds_log10_sigma_i2d is None:
            cfg.channel.ds_log10_sigma_i2d = defaults["ds_log10_sigma_i2d"]
        problems = cfg.validate()
        if problems:
            raise ConfigError(problems)
        return cfg

    def validate(self) -> list[str]:
        """Return a list of violated invariants (empty when valid)."""
        p = []

        def near_integer(x):
            return abs(x - round(x)) <= 1e-9 * max(1.0, abs(x))

        w = self.subcarriers_per_prb * self.subcarrier_spacing_hz
        if self.prb_bandwidth_hz is not None and abs(self.prb_bandwidth_hz - w) > 1e-6:
            p.append(f"prb_bandwidth_hz ({self.prb_bandwidth_hz}) != subcarriers_per_prb * "
                     f"subcarrier_spacing_hz ({w})")
        if not near_integer(self.ci_duration_s / self.prb_duration_s):
            p.append("ci_duration_s must be an integer multiple of prb_duration_s")
        if not near_integer(self.system_bandwidth_hz / w):
            p.append("system_bandwidth_hz must be an integer multiple of the PRB bandwidth")
        if not (0.0 < self.fec_rate <= 1.0):
            p.append("fec_rate must lie in (0, 1]")
        if not self.speed_min_mps < self.speed_max_mps:
            p.append("speed_min_mps must be strictly below speed_max_mps")
        if self.speed_min_mps <= 0:
            p.append("speed_min_mps must be positive")
        if self.neighbor_range_m <= 0:
            p.append("neighbor_range_m must be positive")
        ladder = tuple(self.d2d_rate_ladder)
        if not ladder:
            p.append("d2d_rate_ladder must not be empty")
        else:
            if any(r <= 0 for r in ladder):
                p.append("d2d_rate_ladder rates must be positive")
            if any(r > self.max_spectral_efficiency + 1e-12 for r in ladder):
                p.append("every d2d_rate_ladder rate must be <= max_spectral_efficiency")
            if list(ladder) != sorted(ladder):
                p.append("d2d_rate_ladder must be sorted ascending")
        if self.roi_length_m <= 0 or self.roi_width_m < 0:
            p.append("roi dimensions must be positive")
        if self.sim_duration_s <= 0:
            p.append("sim_duration_s must be positive")
        if self.warmup_s < 0:
            p.append("warmup_s must be nonnegative")
        for name in ("sim_duration_s", "warmup_s"):
            val = getattr(self, name)
            if val > 0 and not near_integer(val / self.ci_duration_s):
                p.append(f"{name} must be an integer multiple of ci_duration_s")
        if self.content_timeout_s < 0 or self.sharing_timeout_s <= 0:
            p.append("timeouts must be positive (content timeout may be zero)")
        if self.payload_bits <= 0:
            p.append("payload_bits must be positive")
        if self.catalog_size < 0:
            p.append("catalog_size must be >= 0 (0 means unbounded)")
        if self.catalog_size == 0 and self.zipf_alpha <= 1.0:
            p.append("an unbounded catalog requires zipf_alpha > 1")
        if self.vehicle_rate_per_s < 0 or self.request_rate_per_s < 0:
            p.append("arrival rates must be nonnegative")
        if self.max_spectral_efficiency <= 0:
            p.append("max_spectral_efficiency must be positive")
        if self.retry_limit < 1:
            p.append("retry_limit must be >= 1")
        if self.channel.n_scatter_paths < 1:
            p.append("n_scatter_paths must be >= 1")
        if self.channel.grid_step_m <= 0:
            p.append("grid_step_m must be positive")
        if not -1.0 <= self.channel.shadow_k_cross_corr <= 1.0:
            p.append("shadow_k_cross_corr must lie in [-1, 1]")
        return p

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["scenario"] = Scenario(self.scenario).value
        d["channel_model"] = ChannelModel(self.channel_model).name
        d["mode"] = Mode(self.mode).value
        d["d2d_rate_ladder"] = list(self.d2d_rate_ladder)
        return d


# ---- INI round-trip ----------------------------------------------------------

# section -> fields mapping, one section per subsystem
_SECTIONS = {
    "engine": ["scenario", "channel_model", "mode", "seed", "roi_length_m", "roi_width_m",
               "cell_diameter_m", "bs_height_m", "device_height_m", "ci_duration_s",
               "sim_duration_s", "warmup_s", "prepopulate"],
    "phy": ["system_bandwidth_hz", "prb_duration_s", "prb_bandwidth_hz",
            "subcarriers_per_prb", "subcarrier_spacing_hz", "noise_psd_dbm_hz",
            "noise_figure_db", "max_spectral_efficiency", "d2d_rate_ladder", "fec_rate",
            "link_margin_i2d_db", "link_margin_d2d_db", "payload_bits", "retry_limit"],
    "traffic": ["vehicle_rate_per_s", "request_rate_per_s", "speed_min_mps",
                "speed_max_mps", "zipf_alpha", "catalog_size"],
    "cdms": ["content_timeout_s", "sharing_timeout_s", "neighbor_range_m"],
}

_ENUM_FIELDS = {"scenario": Scenario, "channel_model": ChannelModel, "mode": Mode}


def _parse_value(name: str, ftype, raw: str):
    raw = raw.strip()
    if raw.lower() in ("none", ""):
        return None
    if name in _ENUM_FIELDS:
        enum_cls = _ENUM_FIELDS[name]
        if enum_cls is ChannelModel:
            return ChannelModel[raw] if raw.startswith("M") else ChannelModel(int(raw))
        return enum_cls(raw)
    if name == "d2d_rate_ladder":
        return tuple(float(x) for x in raw.replace(",", " ").split())
    if ftype in ("bool", bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if ftype in ("int", int):
        return int(raw)
    return float(raw)


def load_config(path) -> SimConfig:
    """Load a SimConfig from an INI file with one section per subsystem."""
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    cfg = SimConfig()
    known_sim = {f.name: f for f in fields(SimConfig)}
    known_chan = {f.name: f for f in fields(ChannelParams)}
    problems = []
    for section in parser.sections():
        for key, raw in parser.items(section):
            if section == "channel":
                if key not in known_chan:
                    problems.append(f"unknown key [channel] {key}")
                    continue
                typ = known_chan[key].type
                setattr(cfg.channel, key, _parse_value(key, _base_type(typ), raw))
            else:
                if section not in _SECTIONS or key not in _SECTIONS[section]:
                    problems.append(f"unknown key [{section}] {key}")
                    continue
                typ = known_sim[key].type
                setattr(cfg, key, _parse_value(key, _base_type(typ), raw))
    if problems:
        raise ConfigError(problems)
    return cfg


def _base_type(annotation) -> str:
    s = str(annotation)
    for name in ("bool", "int", "float"):
        if name in s:
            return name
    return "str"


def save_config(cfg: SimConfig, path) -> None:
    parser = configparser.ConfigParser()
    for section, names in _SECTIONS.items():
        parser[section] = {}
        for name in names:
            val = getattr(cfg, name)
            if val is None:
                continue
            if name in _ENUM_FIELDS:
                val = val.name if name == "channel_model" else val.value
            elif name == "d2d_rate_ladder":
                val = ", ".join(str(x) for x in val)
            parser[section][name] = str(val)
    parser["channel"] = {}
    for f in fields(ChannelParams):
        val = getattr(cfg.channel, f.name)
        if val is not None:
            parser["channel"][f.name] = str(val)
    with open(path, "w") as fh:
        parser.write(fh)


def desk_profile(**overrides) -> SimConfig:
    """Default short-horizon profile: full-length street, five minutes."""
    return dataclasses.replace(SimConfig(), **overrides)


def paper_scale_profile(**overrides) -> SimConfig:
    """Long-horizon profile: thirty minutes of simulated time."""
    base = dataclasses.replace(SimConfig(), sim_duration_s=1800.0, warmup_s=180.0)
    return dataclasses.replace(base, **overrides)
