"""Experiment orchestration: pipeline stages, presets, and CSV emission.

A study is a grid of (strategy, seed) cells over one shared dataset and
partition. Every stage writes its artifact atomically and can be resumed:
with resume on, a stage whose artifact already exists is loaded instead of
recomputed. Summary and metrics CSVs are reassembled from per-cell artifacts
on every run, so their bytes depend only on the config.

Ground truth is touched in exactly four places, each inside the matching
gate purpose: partitioning and annotation ("annotation"), validation scoring
("validation"), the gt baseline's reward extraction ("gt_agent"), and
rollout evaluation, which queries the live environment rather than stored
rewards and needs no gate at all.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .agents import AgentConfig, bc_train, crr_train, evaluate_policy
from .config import (
    ExperimentConfig,
    StrategyEntry,
    config_hash,
    config_to_dict,
)
from .data import (
    GATE,
    Dataset,
    DatasetPartition,
    TimestepAnnotation,
    annotate_timesteps,
    generate_dataset,
    load_dataset,
    load_partition,
    partition as make_partition,
    save_dataset,
    save_partition,
)
from .errors import ConfigError, PipelineError
from .learner import Mlp, load_model, save_model
from .metrics import CRITERIA, MetricsReport, ScoredTimesteps, evaluate_scores, select_model
from .seeding import derive_seed
from .strategies import (
    RewardModel,
    StrategyConfig,
    bootstrap_refinement,
    build_reward_model,
    ensemble_model,
    estimate_class_prior,
    refine,
    relabel,
    sqil_rewards,
    t0_from_fraction,
)

CURVE_COLUMNS = ("preset", "strategy", "seed", "step", "mean_return", "success_rate")
METRICS_COLUMNS = (
    "strategy",
    "config_hash",
    "t0",
    "iter",
    "precision",
    "recall",
    "f_score",
    "auc_pr",
)
SUMMARY_COLUMNS = ("preset", "strategy", "seed", "final_success_rate", "final_mean_return")
EVAL_COLUMNS = ("preset", "strategy", "seed", "episodes", "mean_return", "success_rate")
SWEEP_BEST_COLUMNS = ("criterion", "strategy", "config_hash", "t0", "lr", "value")

SUMMARY_CHECKPOINTS = 10
REWARDS_FORMAT = "rewardlab-rewards-v1"

MODEL_KINDS = ("oril", "tgr", "tgr_i", "sup_demo", "sup_and_flat")


# ---------------------------------------------------------------------------
# Artifact layout and atomic I/O
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunPaths:
    out: Path

    @classmethod
    def create(cls, out_dir: str | Path) -> "RunPaths":
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        return cls(out=out)

    @property
    def dataset(self) -> Path:
        return self.out / "dataset.jsonl"

    @property
    def partition(self) -> Path:
        return self.out / "partition.json"

    def reward_dir(self, label: str, seed: int) -> Path:
        return self.out / "reward" / f"{label}_seed{seed}"

    def rewards_file(self, label: str, seed: int) -> Path:
        return self.out / "rewards" / f"{label}_seed{seed}.json"

    def agent_dir(self, label: str, seed: int) -> Path:
        return self.out / "agents" / f"{label}_seed{seed}"

    def curve_file(self, label: str, seed: int) -> Path:
        return self.out / "curves" / f"{label}_seed{seed}.csv"

    @property
    def reward_metrics(self) -> Path:
        return self.out / "reward_metrics.csv"

    @property
    def summary(self) -> Path:
        return self.out / "summary.csv"

    @property
    def eval_report(self) -> Path:
        return self.out / "eval_report.csv"

    @property
    def sweep_csv(self) -> Path:
        return self.out / "sweep.csv"

    @property
    def sweep_best(self) -> Path:
        return self.out / "sweep_best.csv"

    @property
    def run_record(self) -> Path:
        return self.out / "run_record.json"

    @property
    def resolved_config(self) -> Path:
        return self.out / "config.resolved.json"


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _save_model_atomic(path: Path, mlp: Mlp, provenance: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.stem + ".tmp.npz")
    save_model(tmp, mlp, provenance)
    os.replace(tmp, path)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: Path, columns: tuple[str, ...], rows: list[dict]) -> None:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(row[c]) for c in columns))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_curve_csv(path: Path) -> list[dict]:
    rows = []
    with path.open() as fh:
        for raw in csv.DictReader(fh):
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
    return rows


# ---------------------------------------------------------------------------
# Shared stages
# ---------------------------------------------------------------------------


def ensure_dataset(config: ExperimentConfig, paths: RunPaths, resume: bool) -> Dataset:
    if resume and paths.dataset.exists():
        return load_dataset(paths.dataset)
    mix = [(entry.to_kind(), entry.weight) for entry in config.dataset.policy_mix]
    dataset = generate_dataset(config.env, config.dataset.n_episodes, mix, config.dataset.seed)
    tmp = paths.dataset.with_name(paths.dataset.name + ".tmp")
    save_dataset(dataset, tmp)
    os.replace(tmp, paths.dataset)
    return dataset


def _needs_annotation(config: ExperimentConfig) -> bool:
    return any(s.kind in ("sup_demo", "sup_and_flat") for s in config.strategies)


def ensure_partition(
    config: ExperimentConfig, dataset: Dataset, paths: RunPaths, resume: bool
) -> tuple[DatasetPartition, TimestepAnnotation | None]:
    if resume and paths.partition.exists():
        part, annotation = load_partition(paths.partition)
        part.check(dataset)
        return part, annotation
    pc = config.partition
    part = make_partition(
        dataset,
        p_demo=pc.p_demo,
        reward_pool_fraction=pc.reward_pool_fraction,
        validation_count=pc.validation_count,
        seed=pc.seed,
        min_demos=pc.min_demos,
    )
    annotation = annotate_timesteps(dataset, part.demo_ids) if _needs_annotation(config) else None
    tmp = paths.partition.with_name(paths.partition.name + ".tmp")
    save_partition(part, tmp, annotation)
    os.replace(tmp, paths.partition)
    return part, annotation


def require_dataset(config: ExperimentConfig, paths: RunPaths) -> Dataset:
    if not paths.dataset.exists():
        raise PipelineError(f"dataset artifact missing at {paths.dataset}; run gen-data first")
    return load_dataset(paths.dataset)


def require_partition(
    dataset: Dataset, paths: RunPaths
) -> tuple[DatasetPartition, TimestepAnnotation | None]:
    if not paths.partition.exists():
        raise PipelineError(f"partition artifact missing at {paths.partition}; run gen-data first")
    part, annotation = load_partition(paths.partition)
    part.check(dataset)
    return part, annotation


def gt_rewards_for(dataset: Dataset, ids) -> dict[int, np.ndarray]:
    """Ground-truth reward channel for the gt baseline agent."""
    out: dict[int, np.ndarray] = {}
    with GATE.allow("gt_agent"):
        for traj_id in ids:
            out[traj_id] = dataset.get(traj_id).gt_rewards.astype(np.float64)
    return out


def validation_scored(
    predict, dataset: Dataset, part: DatasetPartition
) -> ScoredTimesteps:
    """Score validation timesteps; the only gt read is under "validation"."""
    if not part.validation_ids:
        raise PipelineError("partition has no validation episodes")
    scores = np.concatenate(
        [predict(dataset.get(i).observations) for i in part.validation_ids]
    )
    with GATE.allow("validation"):
        labels = np.concatenate(
            [dataset.get(i).gt_rewards for i in part.validation_ids]
        )
    return ScoredTimesteps(scores=scores, labels=labels, source="validation")


def validation_report(
    model: RewardModel, dataset: Dataset, part: DatasetPartition
) -> MetricsReport:
    return evaluate_scores(validation_scored(model.predict, dataset, part))


# ---------------------------------------------------------------------------
# Per-cell stages
# ---------------------------------------------------------------------------


def _strategy_config(
    entry: StrategyEntry, config: ExperimentConfig, seed: int, part: DatasetPartition
) -> StrategyConfig:
    prior = entry.class_prior
    if entry.kind == "oril" and entry.oril_reg == "pu" and prior is None:
        prior = estimate_class_prior(part, config.partition.p_demo)
    return StrategyConfig(
        kind=entry.kind,
        t0=t0_from_fraction(entry.t0_fraction, config.env.max_steps),
        refinement_iters=entry.refinement_iters,
        oril_reg=entry.oril_reg,
        class_prior=prior,
        train_spec=entry.train.to_spec(seed=derive_seed(seed, "reward", entry.label)),
    )


def _metrics_row(
    label: str, cfg_hash: str, t0, iter_idx, report: MetricsReport
) -> dict:
    return {
        "strategy": label,
        "config_hash": cfg_hash,
        "t0": "" if t0 is None else t0,
        "iter": "" if iter_idx is None else iter_idx,
        "precision": report.precision,
        "recall": report.recall,
        "f_score": report.f_score,
        "auc_pr": report.auc_pr,
    }


def load_reward_model(cell_dir: Path) -> RewardModel:
    meta_path = cell_dir / "metrics.json"
    if not meta_path.exists():
        raise PipelineError(f"reward model missing at {cell_dir}; run train-reward first")
    meta = json.loads(meta_path.read_text())
    mlps = []
    for i in range(meta["n_models"]):
        mlp, _ = load_model(cell_dir / f"model_{i}.npz")
        mlps.append(mlp)
    if not mlps:
        raise PipelineError(f"no model files under {cell_dir}")
    return RewardModel(mlps=tuple(mlps), info=meta.get("info", {}))


def reward_cell(
    config: ExperimentConfig,
    entry: StrategyEntry,
    seed: int,
    dataset: Dataset,
    part: DatasetPartition,
    annotation: TimestepAnnotation | None,
    paths: RunPaths,
    resume: bool,
) -> tuple[RewardModel | None, list[dict]]:
    """Train (or reload) one strategy's reward model and its metrics rows."""
    if entry.kind in ("bc", "gt", "sqil"):
        return None, []
    cell_dir = paths.reward_dir(entry.label, seed)
    meta_path = cell_dir / "metrics.json"
    if resume and meta_path.exists():
        meta = json.loads(meta_path.read_text())
        return load_reward_model(cell_dir), meta["rows"]

    scfg = _strategy_config(entry, config, seed, part)
    cfg_hash = config_hash(config)
    rows: list[dict] = []
    if entry.kind == "tgr_i":
        state = bootstrap_refinement(dataset, part, scfg.t0, scfg.train_spec)
        rows.append(
            _metrics_row(
                entry.label, cfg_hash, scfg.t0, 0,
                validation_report(ensemble_model(state), dataset, part),
            )
        )
        for _ in range(entry.refinement_iters):
            state = refine(dataset, part, state, scfg.train_spec)
            rows.append(
                _metrics_row(
                    entry.label, cfg_hash, scfg.t0, state.iteration,
                    validation_report(ensemble_model(state), dataset, part),
                )
            )
        model = ensemble_model(state, {"label": entry.label, "seed": seed})
    else:
        model = build_reward_model(dataset, part, scfg, annotations=annotation)
        assert model is not None
        t0 = scfg.t0 if entry.kind == "tgr" else None
        rows.append(
            _metrics_row(entry.label, cfg_hash, t0, None, validation_report(model, dataset, part))
        )

    cell_dir.mkdir(parents=True, exist_ok=True)
    provenance = {"strategy": entry.label, "seed": seed, "config_hash": cfg_hash}
    for i, mlp in enumerate(model.mlps):
        _save_model_atomic(cell_dir / f"model_{i}.npz", mlp, provenance)
    meta = {"rows": rows, "n_models": len(model.mlps), "info": provenance}
    atomic_write_text(meta_path, json.dumps(meta, indent=1) + "\n")
    return model, rows


def save_rewards(path: Path, rewards: dict[int, np.ndarray]) -> None:
    doc = {
        "format": REWARDS_FORMAT,
        "rewards": {str(k): rewards[k].tolist() for k in sorted(rewards)},
    }
    atomic_write_text(path, json.dumps(doc) + "\n")


def load_rewards(path: Path) -> dict[int, np.ndarray]:
    if not path.exists():
        raise PipelineError(f"rewards artifact missing at {path}; run relabel first")
    doc = json.loads(path.read_text())
    if doc.get("format") != REWARDS_FORMAT:
        raise PipelineError(f"{path}: expected {REWARDS_FORMAT} document")
    return {int(k): np.array(v, dtype=np.float64) for k, v in doc["rewards"].items()}


def relabel_cell(
    entry: StrategyEntry,
    seed: int,
    model: RewardModel | None,
    dataset: Dataset,
    part: DatasetPartition,
    paths: RunPaths,
    resume: bool,
) -> dict[int, np.ndarray] | None:
    """Produce the reward channel the agent will train on for this cell."""
    if entry.kind == "bc":
        return None
    path = paths.rewards_file(entry.label, seed)
    if resume and path.exists():
        return load_rewards(path)
    if entry.kind == "gt":
        rewards = gt_rewards_for(dataset, part.policy_pool_ids)
    elif entry.kind == "sqil":
        rewards = sqil_rewards(dataset, part)
    else:
        if model is None:
            raise PipelineError(
                f"reward model for {entry.label} not available; run train-reward first"
            )
        rewards = relabel(model, [dataset.get(i) for i in part.policy_pool_ids])
    save_rewards(path, rewards)
    return rewards


def agent_cell(
    config: ExperimentConfig,
    entry: StrategyEntry,
    seed: int,
    rewards: dict[int, np.ndarray] | None,
    dataset: Dataset,
    part: DatasetPartition,
    paths: RunPaths,
    resume: bool,
) -> list[dict]:
    """Train (or reload) one agent cell; returns its curve rows."""
    curve_path = paths.curve_file(entry.label, seed)
    if resume and curve_path.exists():
        return read_curve_csv(curve_path)

    eval_cfg = config.eval
    eval_seed = derive_seed(eval_cfg.seed, "curve", seed)
    total_steps = config.agent.train.steps
    curve_rows: list[dict] = []

    def hook(step_i: int, policy: Mlp) -> None:
        if step_i % eval_cfg.every != 0 and step_i != total_steps:
            return
        report = evaluate_policy(
            policy, config.env, eval_cfg.episodes, eval_seed, mode=eval_cfg.mode
        )
        curve_rows.append(
            {
                "preset": config.preset,
                "strategy": entry.label,
                "seed": seed,
                "step": step_i,
                "mean_return": report.mean_return,
                "success_rate": report.success_rate,
            }
        )

    agent_kind = "bc" if entry.kind == "bc" else config.agent.kind
    acfg = AgentConfig(
        kind=agent_kind,
        discount=config.agent.discount,
        target_sync=config.agent.target_sync,
        weight_rule=config.agent.weight_rule,
        beta=config.agent.beta,
        weight_clip=config.agent.weight_clip,
        train_spec=config.agent.train.to_spec(seed=derive_seed(seed, "agent", entry.label)),
    )
    agent_dir = paths.agent_dir(entry.label, seed)
    provenance = {"strategy": entry.label, "seed": seed, "kind": agent_kind}
    if agent_kind == "bc":
        policy = bc_train(part.demo_ids, dataset, acfg, hook=hook)
    else:
        if rewards is None:
            raise PipelineError(f"no reward channel for strategy {entry.label}")
        policy, critic = crr_train(part.policy_pool_ids, dataset, rewards, acfg, hook=hook)
        _save_model_atomic(agent_dir / "critic.npz", critic, provenance)
    _save_model_atomic(agent_dir / "policy.npz", policy, provenance)
    write_csv(curve_path, CURVE_COLUMNS, curve_rows)
    return curve_rows


def summarize_curve(rows: list[dict]) -> tuple[float, float]:
    """Mean success rate and return over the final checkpoints of a curve."""
    tail = rows[-SUMMARY_CHECKPOINTS:]
    success = float(np.mean([r["success_rate"] for r in tail]))
    mean_return = float(np.mean([r["mean_return"] for r in tail]))
    return success, mean_return


# ---------------------------------------------------------------------------
# Whole-study commands
# ---------------------------------------------------------------------------


@dataclass
class StudyResult:
    config: ExperimentConfig
    hash: str
    paths: RunPaths
    curves: dict[tuple[str, int], list[dict]]
    metrics_rows: list[dict]
    summary_rows: list[dict]


def _write_resolved_config(config: ExperimentConfig, paths: RunPaths) -> None:
    doc = {"hash": config_hash(config), "config": config_to_dict(config)}
    atomic_write_text(paths.resolved_config, json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _assemble_metrics(config: ExperimentConfig, paths: RunPaths) -> list[dict]:
    rows: list[dict] = []
    for entry in config.strategies:
        for seed in config.seeds:
            meta_path = paths.reward_dir(entry.label, seed) / "metrics.json"
            if meta_path.exists():
                rows.extend(json.loads(meta_path.read_text())["rows"])
    return rows


def _assemble_summary(
    config: ExperimentConfig, curves: dict[tuple[str, int], list[dict]]
) -> list[dict]:
    rows: list[dict] = []
    for entry in config.strategies:
        per_seed: list[tuple[float, float]] = []
        for seed in config.seeds:
            cell = curves.get((entry.label, seed))
            if not cell:
                continue
            success, mean_return = summarize_curve(cell)
            per_seed.append((success, mean_return))
            rows.append(
                {
                    "preset": config.preset,
                    "strategy": entry.label,
                    "seed": seed,
                    "final_success_rate": success,
                    "final_mean_return": mean_return,
                }
            )
        if per_seed:
            rows.append(
                {
                    "preset": config.preset,
                    "strategy": entry.label,
                    "seed": "mean",
                    "final_success_rate": float(np.mean([s for s, _ in per_seed])),
                    "final_mean_return": float(np.mean([m for _, m in per_seed])),
                }
            )
    return rows


def cmd_gen_data(config: ExperimentConfig, resume: bool = False) -> RunPaths:
    paths = RunPaths.create(config.out_dir)
    _write_resolved_config(config, paths)
    dataset = ensure_dataset(config, paths, resume)
    ensure_partition(config, dataset, paths, resume)
    return paths

def _labels(config: ExperimentConfig, only: str | None) -> list[StrategyEntry]:
    if only is None:
        return list(config.strategies)
    return [config.strategy(only)]


def cmd_train_reward(
    config: ExperimentConfig, strategy: str | None = None, resume: bool = False
) -> list[dict]:
    paths = RunPaths.create(config.out_dir)
    dataset = require_dataset(config, paths)
    part, annotation = require_partition(dataset, paths)
    for entry in _labels(config, strategy):
        for seed in config.seeds:
            reward_cell(config, entry, seed, dataset, part, annotation, paths, resume)
    rows = _assemble_metrics(config, paths)
    write_csv(paths.reward_metrics, METRICS_COLUMNS, rows)
    return rows


def cmd_relabel(
    config: ExperimentConfig, strategy: str | None = None, resume: bool = False
) -> None:
    paths = RunPaths.create(config.out_dir)
    dataset = require_dataset(config, paths)
    part, _ = require_partition(dataset, paths)
    for entry in _labels(config, strategy):
        if entry.kind == "bc":
            continue
        for seed in config.seeds:
            model = None
            if entry.kind in MODEL_KINDS:
                model = load_reward_model(paths.reward_dir(entry.label, seed))
            relabel_cell(entry, seed, model, dataset, part, paths, resume)


def cmd_train_agent(
    config: ExperimentConfig, strategy: str | None = None, resume: bool = False
) -> dict[tuple[str, int], list[dict]]:
    paths = RunPaths.create(config.out_dir)
    dataset = require_dataset(config, paths)
    part, _ = require_partition(dataset, paths)
    curves: dict[tuple[str, int], list[dict]] = {}
    for entry in _labels(config, strategy):
        for seed in config.seeds:
            rewards = None
            if entry.kind != "bc":
                rewards = load_rewards(paths.rewards_file(entry.label, seed))
            curves[(entry.label, seed)] = agent_cell(
                config, entry, seed, rewards, dataset, part, paths, resume
            )
    # Refresh the summary from every curve present on disk.
    all_curves: dict[tuple[str, int], list[dict]] = {}
    for entry in config.strategies:
        for seed in config.seeds:
            path = paths.curve_file(entry.label, seed)
            if path.exists():
                all_curves[(entry.label, seed)] = read_curve_csv(path)
    write_csv(paths.summary, SUMMARY_COLUMNS, _assemble_summary(config, all_curves))
    return curves


def cmd_eval(
    config: ExperimentConfig, strategy: str | None = None, resume: bool = False
) -> list[dict]:
    """Re-evaluate stored agent policies and write the eval report CSV."""
    paths = RunPaths.create(config.out_dir)
    rows: list[dict] = []
    for entry in _labels(config, strategy):
        for seed in config.seeds:
            policy_path = paths.agent_dir(entry.label, seed) / "policy.npz"
            if not policy_path.exists():
                raise PipelineError(
                    f"agent checkpoint missing at {policy_path}; run train-agent first"
                )
            policy, _ = load_model(policy_path)
            report = evaluate_policy(
                policy,
                config.env,
                config.eval.episodes,
                derive_seed(config.eval.seed, "final-eval", seed),
                mode=config.eval.mode,
            )
            rows.append(
                {
                    "preset": config.preset,
                    "strategy": entry.label,
                    "seed": seed,
                    "episodes": report.episode_count,
                    "mean_return": report.mean_return,
                    "success_rate": report.success_rate,
                }
            )
    write_csv(paths.eval_report, EVAL_COLUMNS, rows)
    return rows


def run_study(config: ExperimentConfig, resume: bool = False, echo=None) -> StudyResult:
    """The full pipeline: data -> rewards -> relabel -> agents -> CSVs."""
    say = echo or (lambda _msg: None)
    paths = RunPaths.create(config.out_dir)
    _write_resolved_config(config, paths)
    timings: dict[str, float] = {}

    t = time.perf_counter()
    dataset = ensure_dataset(config, paths, resume)
    part, annotation = ensure_partition(config, dataset, paths, resume)
    timings["data"] = time.perf_counter() - t
    say(
        f"dataset: {len(dataset)} episodes, {len(part.demo_ids)} demos, "
        f"{len(part.validation_ids)} validation"
    )

    curves: dict[tuple[str, int], list[dict]] = {}
    for entry in config.strategies:
        for seed in config.seeds:
            t = time.perf_counter()
            model, _rows = reward_cell(
                config, entry, seed, dataset, part, annotation, paths, resume
            )
            rewards = relabel_cell(entry, seed, model, dataset, part, paths, resume)
            curves[(entry.label, seed)] = agent_cell(
                config, entry, seed, rewards, dataset, part, paths, resume
            )
            timings[f"{entry.label}/seed{seed}"] = time.perf_counter() - t
            say(f"cell {entry.label} seed {seed}: {timings[f'{entry.label}/seed{seed}']:.1f}s")

    metrics_rows = _assemble_metrics(config, paths)
    write_csv(paths.reward_metrics, METRICS_COLUMNS, metrics_rows)
    summary_rows = _assemble_summary(config, curves)
    write_csv(paths.summary, SUMMARY_COLUMNS, summary_rows)
    record = {
        "hash": config_hash(config),
        "timings_s": {k: round(v, 3) for k, v in timings.items()},
        "artifacts": {
            "dataset": str(paths.dataset),
            "partition": str(paths.partition),
            "reward_metrics": str(paths.reward_metrics),
            "summary": str(paths.summary),
            "curves": [
                str(paths.curve_file(e.label, s)) for e in config.strategies for s in config.seeds
            ],
        },
    }
    atomic_write_text(paths.run_record, json.dumps(record, indent=1) + "\n")
    return StudyResult(
        config=config,
        hash=config_hash(config),
        paths=paths,
        curves=curves,
        metrics_rows=metrics_rows,
        summary_rows=summary_rows,
    )


# ---------------------------------------------------------------------------
# Sweep
# ---------------------------------------------------------------------------


def cmd_sweep(config: ExperimentConfig, resume: bool = False) -> tuple[list[dict], list[dict]]:
    """Grid over t0 fractions and learning rates for one strategy label.

    Trains each candidate on the first seed, reports validation metrics per
    candidate, and emits one best-of selection per criterion.
    """
    entry = config.strategy(config.sweep.strategy_label)
    if entry.kind not in ("tgr", "tgr_i"):
        raise ConfigError(
            f"sweep strategy must be tgr or tgr_i, got {entry.kind!r}"
        )
    paths = RunPaths.create(config.out_dir)
    dataset = require_dataset(config, paths)
    part, annotation = require_partition(dataset, paths)
    seed = config.seeds[0]

    rows: list[dict] = []
    reports: list[MetricsReport] = []
    describing: list[tuple[str, int, float]] = []
    for t0_fraction in config.sweep.t0_fractions:
        for lr in config.sweep.lrs:
            candidate = replace(
                entry,
                t0_fraction=t0_fraction,
                train=replace(entry.train, lr=lr),
                label=entry.label,
            )
            candidate_config = replace(config, strategies=(candidate,))
            cand_hash = config_hash(candidate_config)
            cell_label = f"sweep-{entry.label}-t{t0_fraction}-lr{lr}"
            cell_dir = paths.reward_dir(cell_label, seed)
            meta_path = cell_dir / "metrics.json"
            if resume and meta_path.exists():
                model = load_reward_model(cell_dir)
            else:
                scfg = _strategy_config(candidate, config, seed, part)
                model = build_reward_model(dataset, part, scfg, annotations=annotation)
                assert model is not None
                cell_dir.mkdir(parents=True, exist_ok=True)
                for i, mlp in enumerate(model.mlps):
                    _save_model_atomic(
                        cell_dir / f"model_{i}.npz", mlp, {"sweep": cell_label}
                    )
                atomic_write_text(
                    meta_path,
                    json.dumps({"rows": [], "n_models": len(model.mlps)}, indent=1) + "\n",
                )
            report = validation_report(model, dataset, part)
            reports.append(report)
            t0 = t0_from_fraction(t0_fraction, config.env.max_steps)
            describing.append((cand_hash, t0, lr))
            iter_idx = entry.refinement_iters if entry.kind == "tgr_i" else None
            rows.append(_metrics_row(entry.label, cand_hash, t0, iter_idx, report))

    best_rows: list[dict] = []
    for criterion in CRITERIA:
        best = select_model(reports, criterion)
        cand_hash, t0, lr = describing[best]
        best_rows.append(
            {
                "criterion": criterion,
                "strategy": entry.label,
                "config_hash": cand_hash,
                "t0": t0,
                "lr": lr,
                "value": getattr(reports[best], criterion),
            }
        )
    write_csv(paths.sweep_csv, METRICS_COLUMNS, rows)
    write_csv(paths.sweep_best, SWEEP_BEST_COLUMNS, best_rows)
    return rows, best_rows


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

# Trend-study scale: 7x7 grid, 2000 episodes, fixed behaviour mix, 3 seeds.
# The horizon is kept tight (25 steps) so that reaching the goal is a real
# constraint for imitators, and observations carry no noise padding so the
# small supervision budgets remain informative. The episode-level study uses
# per-episode goals: policies must learn the relational goal rule rather
# than memorize one cell, which is what separates BC from reward-driven RL
# at this scale. The timestep-level study keeps the fixed goal, where tiny
# clean annotation budgets are sufficient and the flat-augmentation effect
# is isolated from the generalization burden.
_TREND_ENV = {
    "width": 7,
    "height": 7,
    "noise_dims": 0,
    "success_grace": 5,
    "max_steps": 25,
}
_TREND_MIX = [
    {"kind": "expert", "epsilon": 0.2, "weight": 0.4},
    {"kind": "wandering", "weight": 0.3},
    {"kind": "random", "weight": 0.3},
]
_TREND_AGENT = {
    "kind": "crr",
    "discount": 0.9,
    "weight_rule": "exponential",
    "beta": 0.25,
    "train": {"steps": 3000, "batch_size": 256, "lr": 1e-3},
}
_TREND_EVAL = {"every": 250, "episodes": 100, "mode": "sampled", "seed": 777}
_REWARD_TRAIN = {"steps": 6000, "batch_size": 256, "lr": 1e-3}

PRESETS: dict[str, dict] = {
    "episode-level-study": {
        "preset": "episode-level-study",
        "out_dir": "runs/episode-level-study",
        "env": {**_TREND_ENV, "goal_placement": "random-per-episode"},
        "dataset": {"n_episodes": 2000, "seed": 101, "policy_mix": _TREND_MIX},
        "partition": {
            "p_demo": 0.0625,
            "reward_pool_fraction": 0.5,
            "validation_count": 40,
            "min_demos": 0,
            "seed": 11,
        },
        "strategies": [
            {"label": "bc", "kind": "bc"},
            {"label": "gt", "kind": "gt"},
            {"label": "sqil", "kind": "sqil"},
            {"label": "oril", "kind": "oril", "oril_reg": "pu", "train": _REWARD_TRAIN},
            {"label": "tgr", "kind": "tgr", "t0_fraction": 0.25, "train": _REWARD_TRAIN},
            {
                "label": "tgr_i",
                "kind": "tgr_i",
                "t0_fraction": 0.25,
                "refinement_iters": 3,
                "train": _REWARD_TRAIN,
            },
        ],
        "agent": _TREND_AGENT,
        "eval": _TREND_EVAL,
        "seeds": [0, 1, 2],
    },
    "timestep-level-study": {
        "preset": "timestep-level-study",
        "out_dir": "runs/timestep-level-study",
        "env": {**_TREND_ENV, "goal_placement": "fixed"},
        "dataset": {"n_episodes": 2000, "seed": 101, "policy_mix": _TREND_MIX},
        "partition": {
            "p_demo": 0.0078125,
            "reward_pool_fraction": 0.5,
            "validation_count": 40,
            "min_demos": 8,
            "seed": 11,
        },
        "strategies": [
            {"label": "gt", "kind": "gt"},
            {"label": "sup_demo", "kind": "sup_demo", "train": _REWARD_TRAIN},
            {"label": "sup_and_flat", "kind": "sup_and_flat", "train": _REWARD_TRAIN},
        ],
        "agent": _TREND_AGENT,
        "eval": _TREND_EVAL,
        "seeds": [0, 1, 2],
    },
}


def preset_config(
    name: str,
    out_dir: str | None = None,
    seeds: tuple[int, ...] | None = None,
) -> ExperimentConfig:
    from .config import config_from_dict

    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}, expected one of {sorted(PRESETS)}")
    doc = json.loads(json.dumps(PRESETS[name]))
    if out_dir is not None:
        doc["out_dir"] = str(out_dir)
    if seeds is not None:
        doc["seeds"] = list(seeds)
    return config_from_dict(doc)


def cmd_repro(
    name: str,
    out_dir: str | None = None,
    seeds: tuple[int, ...] | None = None,
    resume: bool = False,
    echo=None,
) -> StudyResult:
    return run_study(preset_config(name, out_dir, seeds), resume=resume, echo=echo)
