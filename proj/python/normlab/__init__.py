"""Desk-scale laboratory for studying normalization schemes in deep networks.

The heavy lifting happens in the C++ core; this package re-exports the bound
entry points. `run_config` executes a full experiment config (same semantics
as `normlab run`) and returns the result rows.
"""

from normlab._core import (
    ConfigError,
    Model,
    NormlabError,
    canonical_config,
    config_fingerprint,
    lanczos,
    load_idx,
    normalize,
    rms_penalty,
    run_config,
    synthetic,
)

__all__ = [
    "ConfigError",
    "Model",
    "NormlabError",
    "canonical_config",
    "config_fingerprint",
    "lanczos",
    "load_idx",
    "normalize",
    "rms_penalty",
    "run_config",
    "synthetic",
]

__version__ = "0.1.0"
