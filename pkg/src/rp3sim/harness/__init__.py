from .config import ConfigError, SimConfig, apply_overrides, parse_config, parse_config_text
from .runner import (ExperimentError, ExperimentOutput, bound_curve, build_graph,
                     build_problem, build_trust_params, execute_run, resolve_run,
                     run_experiment)
