"""Tree detection outside forests from Sentinel-like satellite time series."""

from ._tof import (
    ConfigError,
    DataError,
    IoError,
    Network,
    NumericError,
    ShapeError,
    cli,
    select_threshold,
    synth_plot,
    tolerant_confusion,
    users_producers,
    whittaker_smooth,
)

__all__ = [
    "ConfigError",
    "DataError",
    "IoError",
    "Network",
    "NumericError",
    "ShapeError",
    "cli",
    "select_threshold",
    "synth_plot",
    "tolerant_confusion",
    "users_producers",
    "whittaker_smooth",
]
