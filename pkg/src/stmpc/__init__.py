"""Self-triggered distributed min-max MPC for networked mass-spring-damper agents."""

__version__ = "0.1.0"

from .config import VARIANTS, ConfigError, ExperimentConfig, default_config, load_config
from .dynamics import AgentModel, estimate_lipschitz, rollout, step
from .harness import run, table1, validate, write_outputs

__all__ = [
    "VARIANTS", "ConfigError", "ExperimentConfig", "default_config", "load_config",
    "AgentModel", "estimate_lipschitz", "rollout", "step",
    "run", "table1", "validate", "write_outputs",
]
