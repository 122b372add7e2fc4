"""Experiment configs, pipelines and the command line."""
from .config import ConfigError, ExperimentConfig, SuiteConfig, parse_experiment, parse_suite
from .runner import ExperimentError, run_calibration, run_experiment, run_psd, run_suite, simulate
