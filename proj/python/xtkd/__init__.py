"""Cross-task feature distillation laboratory."""

from ._xtkd import (
    ConfigError,
    DomainError,
    Error,
    ShapeError,
    __version__,
    at_loss,
    ce_loss,
    decoupled_bound,
    depth_metrics,
    effective_rank,
    fitnets_loss,
    grad_audit,
    pkt_loss,
    preset_config,
    preset_names,
    run_config,
    run_preset,
    silog_loss,
    spectral_reg_loss,
    svd,
    synth_gen,
)

__all__ = [
    "ConfigError",
    "DomainError",
    "Error",
    "ShapeError",
    "__version__",
    "at_loss",
    "ce_loss",
    "decoupled_bound",
    "depth_metrics",
    "effective_rank",
    "fitnets_loss",
    "grad_audit",
    "pkt_loss",
    "preset_config",
    "preset_names",
    "run_config",
    "run_preset",
    "silog_loss",
    "spectral_reg_loss",
    "svd",
    "synth_gen",
]
