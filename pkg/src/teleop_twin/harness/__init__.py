from .config import BUILTIN_SCENARIOS, ConfigError, ScenarioConfig, load_config, parse_config
from .runlog import CorruptLog, RunLog, parse_log, read_log
from .sim import SimulationResult, run_scenario, simulate

__all__ = [
    "BUILTIN_SCENARIOS",
    "ConfigError",
    "CorruptLog",
    "RunLog",
    "ScenarioConfig",
    "SimulationResult",
    "load_config",
    "parse_config",
    "parse_log",
    "read_log",
    "run_scenario",
    "simulate",
]
