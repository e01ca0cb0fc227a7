"""Multi-agent deep Q-learning for V2X spectrum sharing."""

import json

from ._v2x_marl import (
    ConfigError,
    Simulator,
    aggregate,
    default_config,
    free_space_loss_1m_db,
    grad_check,
    large_scale_gain_db,
    link_rate,
    normalize_config,
    run_experiment as _run_experiment,
    train_expert as _train_expert,
)

__all__ = [
    "ConfigError",
    "Simulator",
    "aggregate",
    "default_config",
    "free_space_loss_1m_db",
    "grad_check",
    "large_scale_gain_db",
    "link_rate",
    "normalize_config",
    "run_experiment",
    "train_expert",
]


def _as_json(config):
    return config if isinstance(config, str) else json.dumps(config)


def run_experiment(config, expert_checkpoint="", write_files=True):
    """Run every cell of `config` (a dict or JSON string); returns per-cell metrics."""
    return _run_experiment(_as_json(config), str(expert_checkpoint), write_files)


def train_expert(config, checkpoint):
    """Train the Double DQN expert and write its checkpoint; returns warnings."""
    return _train_expert(_as_json(config), str(checkpoint))
