"""Command line entry point for rendering curve figures.

Exit codes: 0 on success, 2 for schema or usage errors.
"""

from __future__ import annotations

import argparse
import sys

from .curves import METRICS, SchemaError, UsageError, plot_curves


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plot-curves",
        description="Render experiment curve CSVs as smoothed, banded figures",
    )
    parser.add_argument(
        "--csv",
        action="append",
        required=True,
        help="curve CSV path (repeatable)",
    )
    parser.add_argument(
        "--metric",
        choices=METRICS,
        default="success_rate",
        help="which column to plot",
    )
    parser.add_argument(
        "--smooth",
        type=float,
        default=0.3,
        help="rolling window as a fraction of the step range",
    )
    parser.add_argument("--out", required=True, help="output image path")
    return parser


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        path = plot_curves(args.csv, args.out, metric=args.metric, smoothing=args.smooth)
    except (SchemaError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {path}")
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
