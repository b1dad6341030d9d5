"""Meta-learned learning-rate schedules.

Thin Python access to the C++ core: the LR network's forward and backward
passes, closed-form schedules, transfer plans, experiment runs and the
command line tool.
"""

import json as _json

from ._core import (
    CHECKPOINT_FORMAT_VERSION,
    DEFAULT_HIDDEN_SIZE,
    ConfigError,
    DivergenceError,
    DomainError,
    IncompatibleVersionError,
    ParseError,
    UsageError,
    gradcheck,
    init_params,
    load_checkpoint,
    mlrsnet_backward_theta,
    mlrsnet_forward,
    param_count,
    parse_metrics_csv,
    run_cli,
    select_checkpoint_epochs,
    transfer_boundaries,
)
from ._core import run_experiment as _run_experiment
from ._core import schedule_lr as _schedule_lr

__all__ = [
    "CHECKPOINT_FORMAT_VERSION",
    "DEFAULT_HIDDEN_SIZE",
    "ConfigError",
    "DivergenceError",
    "DomainError",
    "IncompatibleVersionError",
    "ParseError",
    "UsageError",
    "gradcheck",
    "init_params",
    "load_checkpoint",
    "mlrsnet_backward_theta",
    "mlrsnet_forward",
    "param_count",
    "parse_metrics_csv",
    "run_cli",
    "run_experiment",
    "schedule_lr",
    "select_checkpoint_epochs",
    "transfer_boundaries",
]


def schedule_lr(schedule, step, steps_per_epoch=1):
    """LR at `step`; `schedule` is a dict or JSON text like a config's schedule."""
    if not isinstance(schedule, str):
        schedule = _json.dumps(schedule)
    return _schedule_lr(schedule, step, steps_per_epoch)


def run_experiment(config, seed, base_dir="."):
    """One run of an experiment config (dict or JSON text)."""
    if not isinstance(config, str):
        config = _json.dumps(config)
    return _run_experiment(config, seed, base_dir)
