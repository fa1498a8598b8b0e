"""System-level simulator of D2D content offloading in vehicular networks."""

__version__ = "0.1.0"

from .config import (ChannelModel, ConfigError, LinkKind, Mode, Scenario, SimConfig,
                     desk_profile, load_config, paper_scale_profile, save_config)
from .engine import Simulator, run_replication
from .metrics import MetricsRecord

__all__ = [
    "ChannelModel", "ConfigError", "LinkKind", "Mode", "Scenario", "SimConfig",
    "Simulator", "MetricsRecord", "run_replication", "desk_profile",
    "paper_scale_profile", "load_config", "save_config", "__version__",
]
