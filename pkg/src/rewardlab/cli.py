"""Command line entry point.

Exit codes: 0 on success, 2 for configuration errors, 3 for any other
pipeline failure raised by this package. Unexpected exceptions propagate
with a traceback.
"""

from __future__ import annotations

import argparse
import sys

from . import harness
from .config import ExperimentConfig, load_config
from .errors import ConfigError, RewardLabError


def _add_common(parser: argparse.ArgumentParser, config_required: bool = True) -> None:
    parser.add_argument(
        "--config",
        required=config_required,
        help="path to a YAML experiment config",
    )
    parser.add_argument(
        "--seed",
        type=int,
        action="append",
        default=None,
        help="override run seeds (repeatable)",
    )
    parser.add_argument("--out", default=None, help="override the output directory")
    parser.add_argument(
        "--resume",
        action="store_true",
        help="reuse artifacts already present in the output directory",
    )


def _add_strategy(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--strategy",
        default=None,
        help="restrict the command to one strategy label",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rewardlab",
        description="Reward learning from limited supervision on a grid world",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the dataset and partition")
    _add_common(p)

    p = sub.add_parser("train-reward", help="train reward models for each strategy")
    _add_common(p)
    _add_strategy(p)

    p = sub.add_parser("relabel", help="write learnt reward channels for the policy pool")
    _add_common(p)
    _add_strategy(p)

    p = sub.add_parser("train-agent", help="train offline agents on relabelled data")
    _add_common(p)
    _add_strategy(p)

    p = sub.add_parser("eval", help="evaluate stored agent checkpoints")
    _add_common(p)
    _add_strategy(p)

    p = sub.add_parser("sweep", help="grid search reward hyperparameters")
    _add_common(p)

    p = sub.add_parser("repro", help="run a named preset end to end")
    p.add_argument("preset", help="preset name")
    _add_common(p, config_required=False)
    return parser


def _load(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(args.config)
    return _apply_overrides(config, args)


def _apply_overrides(config: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    from dataclasses import replace

    if args.out is not None:
        config = replace(config, out_dir=str(args.out))
    if args.seed:
        config = replace(config, seeds=tuple(args.seed))
    return config


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    echo = lambda msg: print(msg)  # noqa: E731
    try:
        if args.command == "gen-data":
            paths = harness.cmd_gen_data(_load(args), resume=args.resume)
            print(f"dataset written to {paths.dataset}")
        elif args.command == "train-reward":
            rows = harness.cmd_train_reward(
                _load(args), strategy=args.strategy, resume=args.resume
            )
            print(f"wrote {len(rows)} reward metric rows")
        elif args.command == "relabel":
            harness.cmd_relabel(_load(args), strategy=args.strategy, resume=args.resume)
            print("reward channels written")
        elif args.command == "train-agent":
            curves = harness.cmd_train_agent(
                _load(args), strategy=args.strategy, resume=args.resume
            )
            print(f"trained {len(curves)} agent cells")
        elif args.command == "eval":
            rows = harness.cmd_eval(_load(args), strategy=args.strategy, resume=args.resume)
            for row in rows:
                print(
                    f"{row['strategy']} seed {row['seed']}: "
                    f"return {row['mean_return']:.3f}, success {row['success_rate']:.3f}"
                )
        elif args.command == "sweep":
            _, best = harness.cmd_sweep(_load(args), resume=args.resume)
            for row in best:
                print(
                    f"best by {row['criterion']}: t0={row['t0']} lr={row['lr']} "
                    f"value={row['value']:.4f}"
                )
        elif args.command == "repro":
            if args.config is not None:
                config = _apply_overrides(load_config(args.config), args)
            else:
                config = harness.preset_config(
                    args.preset,
                    out_dir=args.out,
                    seeds=tuple(args.seed) if args.seed else None,
                )
            result = harness.run_study(config, resume=args.resume, echo=echo)
            print(f"study complete: {result.paths.summary}")
        else:  # pragma: no cover - argparse enforces the choices
            raise AssertionError(args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except RewardLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
