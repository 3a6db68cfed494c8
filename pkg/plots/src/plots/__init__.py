"""Paper-style figures from harness curve CSVs.

This package consumes only the documented curve CSV schema
(preset, strategy, seed, step, mean_return, success_rate); it has no
dependency on the experiment code that produced the files.
"""

from .curves import (
    CURVE_COLUMNS,
    BAND_QUANTILES,
    CurveTable,
    SchemaError,
    UsageError,
    band_quantiles,
    plot_curves,
    smooth_series,
)

__all__ = [
    "CURVE_COLUMNS",
    "BAND_QUANTILES",
    "CurveTable",
    "SchemaError",
    "UsageError",
    "band_quantiles",
    "plot_curves",
    "smooth_series",
]
