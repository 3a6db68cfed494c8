"""Curve tables, rolling-average smoothing, cross-seed bands, figure output.

A figure gets one panel per preset found in the input rows. Within a panel
every strategy contributes one line: each seed's series is smoothed with a
rolling window spanning a fraction of the step range, the drawn line is the
mean of the smoothed seeds, and the shaded band is the central 95% of the
smoothed seed values at each step (linear-interpolation quantiles). The
"gt" strategy is drawn as a dashed reference line without a band.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

CURVE_COLUMNS = ("preset", "strategy", "seed", "step", "mean_return", "success_rate")
METRICS = ("success_rate", "mean_return")
BAND_QUANTILES = (0.025, 0.975)
REFERENCE_STRATEGY = "gt"


class SchemaError(ValueError):
    """The input file does not follow the curve CSV schema."""


class UsageError(ValueError):
    """The inputs are schema-valid but unusable (empty, bad flags)."""


@dataclass(frozen=True)
class Series:
    """One (strategy, seed) curve: checkpoint steps and metric values."""

    preset: str
    strategy: str
    seed: int
    steps: np.ndarray
    values: np.ndarray


@dataclass(frozen=True)
class CurveTable:
    """Parsed curve rows in file order."""

    rows: tuple[dict, ...]

    @classmethod
    def from_csv(cls, paths) -> "CurveTable":
        paths = [Path(p) for p in paths]
        if not paths:
            raise UsageError("no CSV paths given")
        rows: list[dict] = []
        for path in paths:
            if not path.exists():
                raise UsageError(f"curve CSV not found: {path}")
            with path.open() as fh:
                reader = csv.DictReader(fh)
                have = tuple(reader.fieldnames or ())
                missing = [c for c in CURVE_COLUMNS if c not in have]
                if missing:
                    raise SchemaError(f"{path}: missing columns {missing}")
                for i, raw in enumerate(reader, start=2):
                    try:
                        rows.append(
                            {
                                "preset": raw["preset"],
                                "strategy": raw["strategy"],
                                "seed": int(raw["seed"]),
                                "step": int(raw["step"]),
                                "mean_return": float(raw["mean_return"]),
                                "success_rate": float(raw["success_rate"]),
                            }
                        )
                    except (TypeError, ValueError) as exc:
                        raise SchemaError(f"{path} line {i}: {exc}") from None
        if not rows:
            raise UsageError("curve CSVs contain no data rows")
        table = cls(rows=tuple(rows))
        table._check_monotone_steps()
        return table

    def _check_monotone_steps(self) -> None:
        last: dict[tuple[str, str, int], int] = {}
        for row in self.rows:
            key = (row["preset"], row["strategy"], row["seed"])
            if key in last and row["step"] < last[key]:
                raise SchemaError(
                    f"steps decrease for strategy {row['strategy']!r} seed {row['seed']}"
                )
            last[key] = row["step"]

    def presets(self) -> list[str]:
        seen: list[str] = []
        for row in self.rows:
            if row["preset"] not in seen:
                seen.append(row["preset"])
        return seen

    def strategies(self, preset: str) -> list[str]:
        seen: list[str] = []
        for row in self.rows:
            if row["preset"] == preset and row["strategy"] not in seen:
                seen.append(row["strategy"])
        return seen

    def series(self, preset: str, strategy: str, metric: str) -> list[Series]:
        if metric not in METRICS:
            raise UsageError(f"unknown metric {metric!r}, expected one of {METRICS}")
        per_seed: dict[int, list[tuple[int, float]]] = {}
        for row in self.rows:
            if row["preset"] == preset and row["strategy"] == strategy:
                per_seed.setdefault(row["seed"], []).append((row["step"], row[metric]))
        out = []
        for seed in sorted(per_seed):
            pairs = per_seed[seed]
            out.append(
                Series(
                    preset=preset,
                    strategy=strategy,
                    seed=seed,
                    steps=np.array([s for s, _ in pairs], dtype=np.int64),
                    values=np.array([v for _, v in pairs], dtype=np.float64),
                )
            )
        return out


def smooth_series(steps: np.ndarray, values: np.ndarray, fraction: float) -> np.ndarray:
    """Rolling average over a window spanning ``fraction`` of the step range.

    The window is centered: point i averages every value whose step lies
    within half the window width of step i, inclusive. A zero fraction (or a
    single checkpoint) returns the values unchanged.
    """
    if fraction < 0:
        raise UsageError(f"smoothing fraction must be >= 0, got {fraction}")
    steps = np.asarray(steps, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if steps.shape != values.shape or steps.ndim != 1:
        raise UsageError("steps and values must be 1-D arrays of equal length")
    if len(steps) == 0:
        return values.copy()
    half = fraction * (steps[-1] - steps[0]) / 2.0
    out = np.empty_like(values)
    for i, s in enumerate(steps):
        mask = np.abs(steps - s) <= half
        out[i] = values[mask].mean()
    return out


def band_quantiles(matrix: np.ndarray, quantiles=BAND_QUANTILES) -> np.ndarray:
    """Per-step cross-seed quantiles (linear interpolation), rows = seeds."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] < 1:
        raise UsageError("band needs a (seeds, steps) matrix with at least one row")
    return np.quantile(matrix, quantiles, axis=0, method="linear")


def _panel_curves(table: CurveTable, preset: str, metric: str, smoothing: float):
    """(strategy, steps, line, band) tuples for one panel."""
    out = []
    for strategy in table.strategies(preset):
        series = table.series(preset, strategy, metric)
        grids = {tuple(s.steps.tolist()) for s in series}
        if len(grids) != 1:
            raise SchemaError(
                f"seed curves of strategy {strategy!r} disagree on checkpoint steps"
            )
        steps = series[0].steps
        smoothed = np.stack([smooth_series(s.steps, s.values, smoothing) for s in series])
        line = smoothed.mean(axis=0)
        band = band_quantiles(smoothed)
        out.append((strategy, steps, line, band))
    return out


def plot_curves(
    csv_paths,
    out_path,
    metric: str = "success_rate",
    smoothing: float = 0.3,
) -> Path:
    """Render the curve CSVs to one image with a panel per preset."""
    if metric not in METRICS:
        raise UsageError(f"unknown metric {metric!r}, expected one of {METRICS}")
    table = CurveTable.from_csv(csv_paths)
    presets = table.presets()
    fig, axes = plt.subplots(
        1, len(presets), figsize=(6.0 * len(presets), 4.5), squeeze=False
    )
    for ax, preset in zip(axes[0], presets):
        for strategy, steps, line, band in _panel_curves(table, preset, metric, smoothing):
            if strategy == REFERENCE_STRATEGY:
                ax.plot(steps, line, "--", color="black", linewidth=1.5, label=strategy)
                continue
            (handle,) = ax.plot(steps, line, linewidth=1.8, label=strategy)
            ax.fill_between(steps, band[0], band[1], color=handle.get_color(), alpha=0.2)
        ax.set_title(preset)
        ax.set_xlabel("training step")
        ax.set_ylabel(metric.replace("_", " "))
        ax.grid(alpha=0.3)
        ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
