from ..config import ConfigError, RunConfig, load_config
from .aggregate import aggregate, format_table, sweep_triples
from .experiment import RunManifest, evaluation_battery, run_experiment
from .plots import emit_plots

__all__ = ["ConfigError", "RunConfig", "RunManifest", "aggregate", "emit_plots", "evaluation_battery",
           "format_table", "load_config", "run_experiment", "sweep_triples"]
