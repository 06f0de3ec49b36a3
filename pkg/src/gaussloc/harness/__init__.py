"""Command-line experiment harness."""

from .config import ConfigError, ExperimentConfig, load_config, validate
from .runner import RunResult, emit_summary, execute, write_result
