"""Python access to the mfsc numerics: bisimulation metrics, transport,
value iteration, certification, representation losses and the theory checks."""

from ._mfsc import (
    ConfigError,
    __version__,
    certify,
    config_hash,
    cosine_distance,
    fixed_point_sweep,
    fusion_loss,
    grad_check_suite,
    metric_fixed_point,
    bisim_operator,
    random_mdp,
    reconstruction_loss,
    render_state,
    spearman,
    value_bound_sweep,
    value_iteration,
    wasserstein,
)

__all__ = [
    "ConfigError",
    "__version__",
    "bisim_operator",
    "certify",
    "config_hash",
    "cosine_distance",
    "fixed_point_sweep",
    "fusion_loss",
    "grad_check_suite",
    "metric_fixed_point",
    "random_mdp",
    "reconstruction_loss",
    "render_state",
    "spearman",
    "value_bound_sweep",
    "value_iteration",
    "wasserstein",
]
