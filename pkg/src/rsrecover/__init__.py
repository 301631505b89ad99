"""Rate-splitting cell-free MIMO downlink with blockage recovery.

Modules: ``scenario`` (config, topology, channels), ``rsmodel`` (groups,
beams, SINR and rates), ``solver`` (SCA), ``regroup`` (blockage reaction),
``resilience`` (scoring) and ``runner``/``cli`` (orchestration).
"""

from .regroup import RecoveryReport, dynamic_grouping, recovery_pipeline
from .resilience import ResilienceScore, ResilienceTrace, resilience_score, score_events
from .rsmodel import BeamformerSet, RateAllocation, RsConfiguration, achievable_rates, qos_gap
from .runner import RunSummary, compare_modes, export, load_trace, run_scenario
from .scenario import ChannelState, ConfigError, Mode, ScenarioConfig, load_config
from .solver import ScaState, initialize_sca, run_sca, sca_step

__all__ = [
    "BeamformerSet", "ChannelState", "ConfigError", "Mode", "RateAllocation", "RecoveryReport",
    "ResilienceScore", "ResilienceTrace", "RsConfiguration", "RunSummary", "ScaState",
    "ScenarioConfig", "achievable_rates", "compare_modes", "dynamic_grouping", "export",
    "initialize_sca", "load_config", "load_trace", "qos_gap", "recovery_pipeline",
    "resilience_score", "run_sca", "run_scenario", "sca_step", "score_events",
]
__version__ = "0.1.0"
