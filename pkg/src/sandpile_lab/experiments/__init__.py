"""Experiment orchestration: config files, runners, reports, CLI."""

from .config import ExperimentConfig, parse_config_file
from .report import RunReport
from .runners import run_command

__all__ = ["ExperimentConfig", "parse_config_file", "RunReport", "run_command"]
