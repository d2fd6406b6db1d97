from .config import ConfigError, RunConfig, parse_config_file
from .oversight import OversightError, oversight_cost
from .training import TrainingRun, run_training

__all__ = [
    "RunConfig", "ConfigError", "parse_config_file",
    "TrainingRun", "run_training", "OversightError", "oversight_cost",
]
