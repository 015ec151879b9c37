"""Task arithmetic in the tangent space: desk-scale experiments."""

import json

from ._core import (
    ConfigError,
    ContractError,
    Experiment,
    IoError,
    LayoutError,
    NumericError,
    __version__,
    canonical_config,
    checkpoint_version,
    config_hash,
    gram_psd_margin,
    ring_basis,
)


def experiment(seed=0, **overrides):
    """Experiment from a seed plus nested config overrides, e.g. pretrain={"iterations": 50}."""
    return Experiment(json.dumps({"seed": seed, **overrides}))


__all__ = [
    "ConfigError",
    "ContractError",
    "Experiment",
    "IoError",
    "LayoutError",
    "NumericError",
    "__version__",
    "canonical_config",
    "checkpoint_version",
    "config_hash",
    "experiment",
    "gram_psd_margin",
    "ring_basis",
]
