"""Discrete-event simulator over the full chunk-loading stack."""

from chunkvault.sim.config import (SimConfig, WorkloadSpec, config_from_dict,
                                   load_config, validate_config)
from chunkvault.sim.experiments import (cold_start_drill, run_sim,
                                        scan_resistance_experiment)
from chunkvault.sim.report import MetricsReport

__all__ = [
    "MetricsReport", "SimConfig", "WorkloadSpec", "cold_start_drill",
    "config_from_dict", "load_config", "run_sim",
    "scan_resistance_experiment", "validate_config",
]
