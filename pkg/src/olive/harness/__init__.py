"""Experiment driver, statistics and reporting."""

from .config import AgentSpec, ConfigError, ExperimentConfig, dump_config, load_config, parse_agent, parse_config
from .experiment import EpisodeRecord, RunResult, run_agent, run_experiment, run_olive, run_vae_iw
from .report import emit_reports, read_scores
from .rng import RngStreams
from .stats import build_win_loss, mann_whitney_u, summarize

__all__ = [
    "AgentSpec", "ConfigError", "EpisodeRecord", "ExperimentConfig", "RngStreams", "RunResult",
    "build_win_loss", "dump_config", "emit_reports", "load_config", "mann_whitney_u", "parse_agent",
    "parse_config", "read_scores", "run_agent", "run_experiment", "run_olive", "run_vae_iw", "summarize",
]
