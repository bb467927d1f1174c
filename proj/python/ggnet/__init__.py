"""Nested-graph multivariate virtual sensing.

Thin Python layer over the C++ core: synthetic data generation, transductive
channel splits, GgNet / RNN-family training, imputation and metrics.
"""

from ._ggnet import (
    ConfigError,
    DataError,
    Model,
    NumericError,
    cosine_lr,
    generate_synthetic,
    gradient_suite,
    haversine_km,
    metric,
    pinball_loss,
    split_channels,
)

__all__ = [
    "ConfigError",
    "DataError",
    "Model",
    "NumericError",
    "cosine_lr",
    "generate_synthetic",
    "gradient_suite",
    "haversine_km",
    "metric",
    "pinball_loss",
    "split_channels",
]

__version__ = "0.1.0"
