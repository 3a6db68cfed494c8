"""Reward-supervision strategies and dataset relabeling.

Each strategy turns limited supervision (episode success flags or sparse
timestep annotations) into a reward signal for the policy pool:

  sqil          memorized labels, 1 on demos and 0 elsewhere, no model
  oril          classifier on flat labels, optional PU correction
  tgr           classifier on time-guided labels (0 up to t0, then 1)
  tgr_i         tgr bootstrap plus iterative cross-split refinement
  sup_demo      classifier on ground-truth timestep annotations of demos
  sup_and_flat  sup_demo plus flat-zero targets on the unlabeled pool

Timestep indices are 1-based when compared against t0, so record k of a
trajectory is timestep t = k + 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, DatasetPartition, TimestepAnnotation
from .errors import (
    DataError,
    PartitionError,
    StrategyError,
    UsageError,
)
from .learner import (
    DEFAULT_HIDDEN,
    AdamState,
    Grads,
    Mlp,
    TrainSpec,
    _backward,
    _forward_full,
    _sigmoid,
    add_grads,
    forward,
    init_mlp,
    optimizer_step,
    soft_bce_loss_and_grad,
)
from .seeding import derive_rng, derive_seed

STRATEGY_KINDS = ("sqil", "oril", "tgr", "tgr_i", "sup_demo", "sup_and_flat")

Key = tuple[int, int]


@dataclass(frozen=True)
class StrategyConfig:
    """One strategy run: the kind plus its hyperparameters."""

    kind: str
    t0: int = 0
    refinement_iters: int = 3
    oril_reg: str = "none"
    class_prior: float | None = None
    train_spec: TrainSpec = field(default_factory=TrainSpec)

    def __post_init__(self) -> None:
        if self.kind not in STRATEGY_KINDS:
            raise UsageError(f"unknown strategy {self.kind!r}, expected one of {STRATEGY_KINDS}")
        if self.t0 < 0:
            raise UsageError("t0 must be non-negative")
        if self.refinement_iters < 0:
            raise UsageError("refinement_iters must be non-negative")
        if self.oril_reg not in ("none", "pu"):
            raise UsageError(f"unknown oril_reg {self.oril_reg!r}")
        if self.oril_reg == "pu":
            if self.class_prior is None or not 0.0 < self.class_prior < 1.0:
                raise UsageError("pu regularization needs a class prior in (0, 1)")


def t0_from_fraction(fraction: float, max_steps: int) -> int:
    """Resolve a t0 grid point given as a fraction of max episode length."""
    if fraction < 0:
        raise UsageError("t0 fraction must be non-negative")
    return int(round(fraction * max_steps))


@dataclass(frozen=True)
class SyntheticLabelSet:
    """Per-timestep training targets plus the term groups they belong to.

    groups partition the target keys; the trainer gives each group equal
    expected weight in every batch, matching the per-term expectations of
    the strategy losses.
    """

    targets: dict[Key, float]
    hardness: str
    groups: tuple[tuple[Key, ...], ...]

    def __post_init__(self) -> None:
        if self.hardness not in ("hard", "soft"):
            raise UsageError(f"hardness must be hard or soft, got {self.hardness!r}")
        grouped = [k for g in self.groups for k in g]
        if len(grouped) != len(self.targets) or set(grouped) != set(self.targets):
            raise UsageError("groups must partition the label keys exactly")
        for v in self.targets.values():
            if not 0.0 <= v <= 1.0:
                raise UsageError("targets must lie in [0, 1]")
            if self.hardness == "hard" and v not in (0.0, 1.0):
                raise UsageError("hard label sets may only contain 0 and 1")

    def __len__(self) -> int:
        return len(self.targets)


@dataclass(frozen=True)
class RewardModel:
    """A trained reward predictor: mean over one or two member networks."""

    mlps: tuple[Mlp, ...]
    info: dict

    def predict(self, x: np.ndarray) -> np.ndarray:
        outs = [forward(m, x) for m in self.mlps]
        return np.mean(outs, axis=0)

    @property
    def in_dim(self) -> int:
        return self.mlps[0].in_dim


@dataclass(frozen=True)
class RefinementState:
    """Cross-split refinement state after some iteration i >= 0."""

    iteration: int
    model_a: Mlp
    model_b: Mlp
    labels_a: SyntheticLabelSet
    labels_b: SyntheticLabelSet
    half_a_ids: tuple[int, ...]
    half_b_ids: tuple[int, ...]


def _all_keys(dataset: Dataset, ids) -> list[Key]:
    keys = []
    for i in ids:
        if i not in dataset.by_id:
            raise DataError(f"unknown trajectory id {i}")
        keys.extend((i, t) for t in range(len(dataset.by_id[i])))
    return keys


def sqil_labels(demo_ids, unlabeled_ids, dataset: Dataset) -> SyntheticLabelSet:
    """Flat labels: 1 on every demo timestep, 0 on every unlabeled one."""
    overlap = set(demo_ids) & set(unlabeled_ids)
    if overlap:
        raise PartitionError(f"demo and unlabeled ids overlap: {sorted(overlap)[:5]}")
    demo_keys = _all_keys(dataset, demo_ids)
    unlabeled_keys = _all_keys(dataset, unlabeled_ids)
    targets = {k: 1.0 for k in demo_keys}
    targets.update({k: 0.0 for k in unlabeled_keys})
    return SyntheticLabelSet(
        targets=targets,
        hardness="hard",
        groups=(tuple(demo_keys), tuple(unlabeled_keys)),
    )


def tgr_labels(demo_ids, unlabeled_ids, dataset: Dataset, t0: int) -> SyntheticLabelSet:
    """Time-guided labels: demos get 0 for t <= t0 and 1 after, 1-based t."""
    if t0 < 0:
        raise UsageError("t0 must be non-negative")
    overlap = set(demo_ids) & set(unlabeled_ids)
    if overlap:
        raise PartitionError(f"demo and unlabeled ids overlap: {sorted(overlap)[:5]}")
    pre, post = [], []
    for key in _all_keys(dataset, demo_ids):
        if key[1] + 1 <= t0:
            pre.append(key)
        else:
            post.append(key)
    unlabeled_keys = _all_keys(dataset, unlabeled_ids)
    targets = {k: 0.0 for k in pre}
    targets.update({k: 1.0 for k in post})
    targets.update({k: 0.0 for k in unlabeled_keys})
    return SyntheticLabelSet(
        targets=targets,
        hardness="hard",
        groups=(tuple(pre), tuple(post), tuple(unlabeled_keys)),
    )


def annotation_labels(
    annotations: TimestepAnnotation,
    dataset: Dataset,
    flat_zero_ids=(),
) -> SyntheticLabelSet:
    """Supervised labels from timestep annotations, optionally plus a
    flat-zero group covering every timestep of the given unlabeled ids."""
    annotated = []
    targets: dict[Key, float] = {}
    for traj_id, labels in sorted(annotations.labels.items()):
        if traj_id not in dataset.by_id:
            raise DataError(f"annotation references unknown trajectory id {traj_id}")
        if len(labels) != len(dataset.by_id[traj_id]):
            raise DataError(f"annotation length mismatch for trajectory {traj_id}")
        for t, v in enumerate(labels):
            targets[(traj_id, t)] = float(v)
            annotated.append((traj_id, t))
    if not targets:
        raise StrategyError("no timestep annotations supplied")
    groups: list[tuple[Key, ...]] = [tuple(annotated)]
    if len(tuple(flat_zero_ids)) > 0:
        zero_keys = _all_keys(dataset, flat_zero_ids)
        clash = set(zero_keys) & set(targets)
        if clash:
            raise PartitionError("flat-zero ids overlap the annotated trajectories")
        targets.update({k: 0.0 for k in zero_keys})
        groups.append(tuple(zero_keys))
    return SyntheticLabelSet(targets=targets, hardness="hard", groups=tuple(groups))


def restrict_labels(labels: SyntheticLabelSet, ids) -> SyntheticLabelSet:
    """The same label set filtered to trajectories in ids."""
    keep = set(ids)
    targets = {k: v for k, v in labels.targets.items() if k[0] in keep}
    groups = tuple(
        tuple(k for k in g if k[0] in keep) for g in labels.groups
    )
    groups = tuple(g for g in groups if g)
    return SyntheticLabelSet(targets=targets, hardness=labels.hardness, groups=groups)


def _group_matrices(dataset: Dataset, labels: SyntheticLabelSet):
    """Observation/target arrays per non-empty group, in group order."""
    per = []
    for g in labels.groups:
        if not g:
            continue
        for traj_id, _ in g:
            if traj_id not in dataset.by_id:
                raise DataError(f"label references unknown trajectory id {traj_id}")
        x = np.stack([dataset.by_id[i].observations[t] for i, t in g])
        y = np.array([labels.targets[k] for k in g])
        per.append((g, x, y))
    return per


def labels_loss(mlp: Mlp, dataset: Dataset, labels: SyntheticLabelSet, clamp: float = 1e-6) -> float:
    """Full-dataset objective: sum over groups of the per-group mean BCE."""
    total = 0.0
    for _, x, y in _group_matrices(dataset, labels):
        p = np.clip(forward(mlp, x, clamp), clamp, 1.0 - clamp)
        total += float(np.mean(-y * np.log(p) - (1.0 - y) * np.log(1.0 - p)))
    return total


def train_on_labels(
    dataset: Dataset,
    labels: SyntheticLabelSet,
    train_spec: TrainSpec,
    sample_log: list | None = None,
) -> RewardModel:
    """Fit a logistic reward net to a synthetic label set.

    Each batch slot picks a group uniformly, then a (trajectory, timestep)
    pair uniformly within the group, so every group carries equal expected
    weight regardless of its size.
    """
    if not labels.targets:
        raise UsageError("empty label set")
    per = _group_matrices(dataset, labels)
    n_groups = len(per)
    obs_dim = dataset.spec.obs_dim
    mlp = init_mlp(
        (obs_dim, *DEFAULT_HIDDEN, 1), "logistic", derive_seed(train_spec.seed, "reward-init")
    )
    opt = AdamState.for_mlp(mlp, lr=train_spec.lr)
    rng = derive_rng(train_spec.seed, "reward-batches")
    for _ in range(train_spec.steps):
        slot_groups = rng.integers(0, n_groups, size=train_spec.batch_size)
        xs, ys = [], []
        step_keys: list[Key] = []
        for gi, (keys, x, y) in enumerate(per):
            count = int(np.sum(slot_groups == gi))
            if count == 0:
                continue
            rows = rng.integers(0, len(keys), size=count)
            xs.append(x[rows])
            ys.append(y[rows])
            if sample_log is not None:
                step_keys.extend(keys[r] for r in rows)
        _, grads = soft_bce_loss_and_grad(
            mlp, np.concatenate(xs), np.concatenate(ys), train_spec.clamp
        )
        optimizer_step(mlp, grads, opt)
        if sample_log is not None:
            sample_log.append(step_keys)
    info = {
        "trainer": "labels",
        "hardness": labels.hardness,
        "n_labels": len(labels),
        "steps": train_spec.steps,
        "seed": train_spec.seed,
    }
    return RewardModel(mlps=(mlp,), info=info)


def flat_loss_and_grad(
    mlp: Mlp,
    x_demo: np.ndarray,
    x_unlabeled: np.ndarray,
    pu_prior: float | None = None,
    clamp: float = 1e-6,
) -> tuple[float, Grads]:
    """Flat classification loss E_E[-log p] + E_U[-log(1-p)].

    With a PU class prior pi_p, the unlabeled term is replaced by the
    non-negative estimator max(0, risk_U(neg) - pi_p * risk_E(neg)) and
    pi_p * risk_E(pos) is added. Gradients are exact subgradients of the
    clamped loss: clamped samples and a clamped max() contribute zero.
    """
    acts_e, z_e = _forward_full(mlp, x_demo)
    acts_u, z_u = _forward_full(mlp, x_unlabeled)
    p_e = _sigmoid(z_e[:, 0])
    p_u = _sigmoid(z_u[:, 0])
    pc_e = np.clip(p_e, clamp, 1.0 - clamp)
    pc_u = np.clip(p_u, clamp, 1.0 - clamp)
    inside_e = (p_e > clamp) & (p_e < 1.0 - clamp)
    inside_u = (p_u > clamp) & (p_u < 1.0 - clamp)
    n_e, n_u = len(p_e), len(p_u)
    risk_e_pos = float(np.mean(-np.log(pc_e)))
    risk_u_neg = float(np.mean(-np.log(1.0 - pc_u)))
    d_pos_e = np.where(inside_e, p_e - 1.0, 0.0) / n_e
    d_neg_u = np.where(inside_u, p_u, 0.0) / n_u
    if pu_prior is None:
        loss = risk_e_pos + risk_u_neg
        dz_e = d_pos_e
        dz_u = d_neg_u
    else:
        risk_e_neg = float(np.mean(-np.log(1.0 - pc_e)))
        corrected = risk_u_neg - pu_prior * risk_e_neg
        loss = (1.0 + pu_prior) * risk_e_pos + max(0.0, corrected)
        dz_e = (1.0 + pu_prior) * d_pos_e
        dz_u = np.zeros_like(d_neg_u)
        if corrected > 0.0:
            dz_e = dz_e - pu_prior * np.where(inside_e, p_e, 0.0) / n_e
            dz_u = d_neg_u
    grads_e = _backward(mlp, acts_e, dz_e[:, None])
    grads_u = _backward(mlp, acts_u, dz_u[:, None])
    return loss, add_grads(grads_e, grads_u)


def train_flat(
    dataset: Dataset,
    partition: DatasetPartition,
    train_spec: TrainSpec,
    pu_prior: float | None = None,
) -> RewardModel:
    """Fit a logistic net to flat labels over demos vs the unlabeled pool.

    Every batch is half demo timesteps and half unlabeled timesteps, so the
    two expectations carry equal weight.
    """
    if not partition.demo_ids:
        raise StrategyError("flat training requires at least one demonstration")
    demo_keys = _all_keys(dataset, partition.demo_ids)
    unlabeled_keys = _all_keys(dataset, partition.unlabeled_ids)
    if not unlabeled_keys:
        raise StrategyError("flat training requires a non-empty unlabeled pool")
    x_demo = np.stack([dataset.by_id[i].observations[t] for i, t in demo_keys])
    x_unlabeled = np.stack([dataset.by_id[i].observations[t] for i, t in unlabeled_keys])
    obs_dim = dataset.spec.obs_dim
    mlp = init_mlp(
        (obs_dim, *DEFAULT_HIDDEN, 1), "logistic", derive_seed(train_spec.seed, "reward-init")
    )
    opt = AdamState.for_mlp(mlp, lr=train_spec.lr)
    rng = derive_rng(train_spec.seed, "reward-batches")
    half = max(1, train_spec.batch_size // 2)
    rest = max(1, train_spec.batch_size - half)
    for _ in range(train_spec.steps):
        rows_e = rng.integers(0, len(demo_keys), size=half)
        rows_u = rng.integers(0, len(unlabeled_keys), size=rest)
        _, grads = flat_loss_and_grad(
            mlp, x_demo[rows_e], x_unlabeled[rows_u], pu_prior, train_spec.clamp
        )
        optimizer_step(mlp, grads, opt)
    info = {
        "trainer": "flat",
        "pu_prior": pu_prior,
        "steps": train_spec.steps,
        "seed": train_spec.seed,
    }
    return RewardModel(mlps=(mlp,), info=info)


def estimate_class_prior(partition: DatasetPartition, p_demo: float) -> float:
    """Default PU class prior: observed demos plus the expected number of
    unsampled successes, over the pool size. Each success entered the demo
    set independently with probability p_demo, so the success count is
    estimated as |D_E| / p_demo. A config-supplied prior takes precedence."""
    if not 0.0 < p_demo <= 1.0:
        raise UsageError(f"p_demo must lie in (0, 1], got {p_demo}")
    n_pool = len(partition.reward_pool_ids)
    prior = len(partition.demo_ids) / p_demo / n_pool if n_pool else 0.5
    return float(np.clip(prior, 1e-3, 1.0 - 1e-3))


def bootstrap_refinement(
    dataset: Dataset,
    partition: DatasetPartition,
    t0: int,
    train_spec: TrainSpec,
    sample_log: dict[str, list] | None = None,
) -> RefinementState:
    """Iteration 0: train each half's model on its own time-guided labels."""
    full = tgr_labels(partition.demo_ids, partition.unlabeled_ids, dataset, t0)
    labels_a = restrict_labels(full, partition.half_a_ids)
    labels_b = restrict_labels(full, partition.half_b_ids)
    spec_a = replace(train_spec, seed=derive_seed(train_spec.seed, "refine-a", 0))
    spec_b = replace(train_spec, seed=derive_seed(train_spec.seed, "refine-b", 0))
    log_a = sample_log.setdefault("a", []) if sample_log is not None else None
    log_b = sample_log.setdefault("b", []) if sample_log is not None else None
    model_a = train_on_labels(dataset, labels_a, spec_a, sample_log=log_a)
    model_b = train_on_labels(dataset, labels_b, spec_b, sample_log=log_b)
    return RefinementState(
        iteration=0,
        model_a=model_a.mlps[0],
        model_b=model_b.mlps[0],
        labels_a=labels_a,
        labels_b=labels_b,
        half_a_ids=tuple(partition.half_a_ids),
        half_b_ids=tuple(partition.half_b_ids),
    )


def _soft_labels_from(
    teacher: Mlp, dataset: Dataset, ids, clamp: float
) -> SyntheticLabelSet:
    keys = _all_keys(dataset, ids)
    x = np.stack([dataset.by_id[i].observations[t] for i, t in keys])
    probs = forward(teacher, x, clamp)
    targets = {k: float(p) for k, p in zip(keys, probs)}
    return SyntheticLabelSet(targets=targets, hardness="soft", groups=(tuple(keys),))


def refine(
    dataset: Dataset,
    partition: DatasetPartition,
    state: RefinementState,
    train_spec: TrainSpec,
    sample_log: dict[str, list] | None = None,
) -> RefinementState:
    """One cross-split refinement iteration.

    The frozen iteration i-1 models produce soft targets for the half they
    were NOT trained on; fresh networks are then trained from scratch, each
    only ever sampling its own half.
    """
    if tuple(partition.half_a_ids) != state.half_a_ids or tuple(
        partition.half_b_ids
    ) != state.half_b_ids:
        raise PartitionError("refinement halves do not match the partition")
    i = state.iteration + 1
    labels_a = _soft_labels_from(state.model_b, dataset, state.half_a_ids, train_spec.clamp)
    labels_b = _soft_labels_from(state.model_a, dataset, state.half_b_ids, train_spec.clamp)
    spec_a = replace(train_spec, seed=derive_seed(train_spec.seed, "refine-a", i))
    spec_b = replace(train_spec, seed=derive_seed(train_spec.seed, "refine-b", i))
    log_a = sample_log.setdefault("a", []) if sample_log is not None else None
    log_b = sample_log.setdefault("b", []) if sample_log is not None else None
    model_a = train_on_labels(dataset, labels_a, spec_a, sample_log=log_a)
    model_b = train_on_labels(dataset, labels_b, spec_b, sample_log=log_b)
    return RefinementState(
        iteration=i,
        model_a=model_a.mlps[0],
        model_b=model_b.mlps[0],
        labels_a=labels_a,
        labels_b=labels_b,
        half_a_ids=state.half_a_ids,
        half_b_ids=state.half_b_ids,
    )


def ensemble_predict(state: RefinementState, x: np.ndarray) -> np.ndarray:
    """Mean of the two half-models; the final refined reward predictor."""
    return 0.5 * (forward(state.model_a, x) + forward(state.model_b, x))


def ensemble_model(state: RefinementState, info: dict | None = None) -> RewardModel:
    base = {"trainer": "refinement", "iteration": state.iteration}
    base.update(info or {})
    return RewardModel(mlps=(state.model_a, state.model_b), info=base)


def relabel(model: RewardModel, trajectories) -> dict[int, np.ndarray]:
    """Predicted reward for every timestep of every trajectory, unthresholded."""
    out: dict[int, np.ndarray] = {}
    for traj in trajectories:
        out[traj.id] = model.predict(traj.observations)
    return out


def build_reward_model(
    dataset: Dataset,
    partition: DatasetPartition,
    config: StrategyConfig,
    annotations: TimestepAnnotation | None = None,
    sample_log=None,
) -> RewardModel | None:
    """Dispatch one strategy run. Returns None for sqil, which trains no
    model and is relabelled directly from its memorized labels."""
    spec = config.train_spec
    if config.kind == "sqil":
        return None
    if config.kind == "oril":
        prior = config.class_prior if config.oril_reg == "pu" else None
        return train_flat(dataset, partition, spec, pu_prior=prior)
    if config.kind == "tgr":
        labels = tgr_labels(partition.demo_ids, partition.unlabeled_ids, dataset, config.t0)
        return train_on_labels(dataset, labels, spec, sample_log=sample_log)
    if config.kind == "tgr_i":
        state = bootstrap_refinement(dataset, partition, config.t0, spec)
        for _ in range(config.refinement_iters):
            state = refine(dataset, partition, state, spec)
        return ensemble_model(state, {"t0": config.t0})
    if config.kind in ("sup_demo", "sup_and_flat"):
        if annotations is None:
            raise StrategyError(f"{config.kind} requires timestep annotations")
        flat_zero = partition.unlabeled_ids if config.kind == "sup_and_flat" else ()
        labels = annotation_labels(annotations, dataset, flat_zero_ids=flat_zero)
        return train_on_labels(dataset, labels, spec, sample_log=sample_log)
    raise UsageError(f"unhandled strategy kind {config.kind!r}")


def sqil_rewards(dataset: Dataset, partition: DatasetPartition) -> dict[int, np.ndarray]:
    """Memorized rewards over the policy pool: 1 on demo timesteps, else 0."""
    out: dict[int, np.ndarray] = {}
    demo = set(partition.demo_ids)
    for traj_id in partition.policy_pool_ids:
        n = len(dataset.by_id[traj_id])
        out[traj_id] = np.full(n, 1.0 if traj_id in demo else 0.0)
    return out
