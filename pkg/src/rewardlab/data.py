"""Trajectory datasets: generation, annotation simulation, partitioning, I/O.

A trajectory with T environment steps is stored as T+1 records. Record 0
carries the reset observation with a padding action (STAY) and reward 0;
record k >= 1 carries the observation *after* the k-th step, the action that
produced it, and the reward received on arrival. This keeps observations and
rewards exactly aligned (reward 1 iff the agent sits on the goal in that very
observation), which is what a per-timestep reward classifier is trained and
evaluated on. Agents consume records pairwise: the transition t -> t+1 uses
(obs[t], action[t+1], reward[t+1], obs[t+1]).

Ground-truth rewards are quarantined: ``Trajectory.gt_rewards`` and
``Trajectory.is_success`` can only be read inside a ``GATE.allow(purpose)``
block for one of the authorized purposes (annotation simulation, validation
scoring, ground-truth agent training, rollout evaluation). Reads outside any
purpose raise and are counted, which is what the quarantine instrumentation
test asserts on. Reward-learning code never opens the gate.
"""

from __future__ import annotations

import json
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .env import STAY, BehaviourPolicyKind, GridSpec, behaviour_action, observe, reset, step
from .errors import (
    ConfigError,
    DataError,
    GroundTruthAccessError,
    ParseError,
    PartitionError,
    UsageError,
)
from .seeding import derive_rng, derive_seed

DATASET_FORMAT = "rewardlab-dataset-v1"
PARTITION_FORMAT = "rewardlab-partition-v1"

AUTHORIZED_PURPOSES = ("annotation", "validation", "gt_agent", "evaluation")


class GroundTruthGate:
    """Access barrier around stored ground-truth rewards.

    Reads are only legal inside ``allow(purpose)`` for an authorized purpose;
    any read outside increments ``unauthorized_reads`` and raises. Counters
    exist so tests can prove that a whole pipeline run touched ground truth
    only where the protocol permits.
    """

    def __init__(self) -> None:
        self._purposes: list[str] = []
        self.reads_by_purpose: Counter[str] = Counter()
        self.unauthorized_reads = 0

    @contextmanager
    def allow(self, purpose: str):
        if purpose not in AUTHORIZED_PURPOSES:
            raise GroundTruthAccessError(
                f"purpose {purpose!r} is not one of {AUTHORIZED_PURPOSES}"
            )
        self._purposes.append(purpose)
        try:
            yield
        finally:
            self._purposes.pop()

    def on_read(self) -> None:
        if not self._purposes:
            self.unauthorized_reads += 1
            raise GroundTruthAccessError(
                "ground-truth rewards read outside an authorized purpose"
            )
        self.reads_by_purpose[self._purposes[-1]] += 1

    def reset_counters(self) -> None:
        self.reads_by_purpose.clear()
        self.unauthorized_reads = 0


GATE = GroundTruthGate()


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


class Trajectory:
    """One logged episode. Observations/actions are public, rewards gated."""

    def __init__(
        self,
        traj_id: int,
        observations: np.ndarray,
        actions: np.ndarray,
        gt_rewards: np.ndarray,
        behaviour_kind: str,
        episode_seed: int = 0,
    ) -> None:
        observations = np.asarray(observations, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.int64)
        gt_rewards = np.asarray(gt_rewards, dtype=np.int64)
        if observations.ndim != 2 or len(observations) < 1:
            raise DataError(f"trajectory {traj_id}: observations must be a nonempty 2-D array")
        if not (len(observations) == len(actions) == len(gt_rewards)):
            raise DataError(f"trajectory {traj_id}: record arrays must have equal length")
        if not np.isin(gt_rewards, (0, 1)).all():
            raise DataError(f"trajectory {traj_id}: rewards must be binary")
        self.id = int(traj_id)
        self.behaviour_kind = behaviour_kind
        self.episode_seed = int(episode_seed)
        self.observations = _frozen(observations)
        self.actions = _frozen(actions)
        self._gt_rewards = _frozen(gt_rewards)

    def __len__(self) -> int:
        return len(self.observations)

    @property
    def obs_dim(self) -> int:
        return self.observations.shape[1]

    @property
    def gt_rewards(self) -> np.ndarray:
        GATE.on_read()
        return self._gt_rewards

    @property
    def is_success(self) -> bool:
        """Derived success flag: at least one timestep has positive reward."""
        GATE.on_read()
        return bool(self._gt_rewards.any())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.id == other.id
            and self.behaviour_kind == other.behaviour_kind
            and self.episode_seed == other.episode_seed
            and np.array_equal(self.observations, other.observations)
            and np.array_equal(self.actions, other.actions)
            and np.array_equal(self._gt_rewards, other._gt_rewards)
        )


@dataclass
class Dataset:
    """Immutable pool of trajectories plus the spec that generated them."""

    spec: GridSpec
    trajectories: list[Trajectory]

    def __post_init__(self) -> None:
        self.by_id = {t.id: t for t in self.trajectories}
        if len(self.by_id) != len(self.trajectories):
            raise DataError("duplicate trajectory ids")
        dims = {t.obs_dim for t in self.trajectories}
        if len(dims) > 1:
            raise DataError(f"mixed observation dimensions: {sorted(dims)}")
        if dims and dims != {self.spec.obs_dim}:
            raise DataError(
                f"observation dim {dims.pop()} does not match spec dim {self.spec.obs_dim}"
            )

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def obs_dim(self) -> int:
        return self.spec.obs_dim

    def get(self, traj_id: int) -> Trajectory:
        try:
            return self.by_id[traj_id]
        except KeyError:
            raise DataError(f"unknown trajectory id {traj_id}") from None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.spec == other.spec and self.trajectories == other.trajectories


@dataclass(frozen=True)
class DatasetPartition:
    """Annotation partition of a dataset.

    ``reward_pool_ids`` is the reward-learning pool, split into demo and
    unlabeled ids and into the two refinement halves; ``policy_pool_ids`` is
    the (larger) pool the offline RL agent trains on; ``validation_ids`` is
    the small annotated subset of the unlabeled pool used for metrics only.
    """

    all_ids: tuple[int, ...]
    reward_pool_ids: tuple[int, ...]
    policy_pool_ids: tuple[int, ...]
    demo_ids: tuple[int, ...]
    unlabeled_ids: tuple[int, ...]
    half_a_ids: tuple[int, ...]
    half_b_ids: tuple[int, ...]
    validation_ids: tuple[int, ...]

    def check(self, dataset: Dataset) -> None:
        """Assert all structural invariants against the dataset."""
        pool = set(self.reward_pool_ids)
        demos, unlabeled = set(self.demo_ids), set(self.unlabeled_ids)
        if demos & unlabeled:
            raise PartitionError("demo and unlabeled ids overlap")
        if demos | unlabeled != pool:
            raise PartitionError("demo + unlabeled ids do not cover the reward pool")
        half_a, half_b = set(self.half_a_ids), set(self.half_b_ids)
        if half_a & half_b:
            raise PartitionError("refinement halves overlap")
        if half_a | half_b != pool:
            raise PartitionError("refinement halves do not cover the reward pool")
        if not pool <= set(self.policy_pool_ids):
            raise PartitionError("reward pool is not contained in the policy pool")
        if not set(self.validation_ids) <= unlabeled:
            raise PartitionError("validation ids must come from the unlabeled pool")
        with GATE.allow("annotation"):
            for traj_id in self.demo_ids:
                if not dataset.get(traj_id).is_success:
                    raise PartitionError(f"demo id {traj_id} is not a success trajectory")


@dataclass
class TimestepAnnotation:
    """Per-timestep reward labels for a subset of trajectories."""

    labels: dict[int, np.ndarray]

    def total_labels(self) -> int:
        return sum(len(v) for v in self.labels.values())


def run_episode(
    spec: GridSpec, kind: BehaviourPolicyKind, episode_seed: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Roll one episode; pure function of (spec, kind, episode_seed)."""
    action_rng = derive_rng(episode_seed, "behaviour")
    state = reset(spec, episode_seed)
    observations = [observe(spec, state)]
    actions = [STAY]  # padding: no action precedes the reset observation
    rewards = [0]
    done = state.done(spec)
    while not done:
        action = behaviour_action(kind, state, action_rng)
        state, reward, done = step(spec, state, action)
        observations.append(observe(spec, state))
        actions.append(action)
        rewards.append(reward)
    return np.array(observations), np.array(actions), np.array(rewards)


def generate_dataset(
    spec: GridSpec,
    n_episodes: int,
    policy_mix: list[tuple[BehaviourPolicyKind, float]],
    seed: int,
) -> Dataset:
    """Log ``n_episodes`` episodes, sampling the behaviour kind by weight."""
    if not policy_mix:
        raise ConfigError("policy mix must not be empty")
    if n_episodes < 1:
        raise ConfigError(f"n_episodes must be >= 1, got {n_episodes}")
    weights = np.array([w for _, w in policy_mix], dtype=np.float64)
    if (weights <= 0).any():
        raise ConfigError("policy mix weights must be positive")
    probs = weights / weights.sum()
    mix_rng = derive_rng(seed, "policy-mix")
    kind_indices = mix_rng.choice(len(policy_mix), size=n_episodes, p=probs)
    trajectories = []
    for i in range(n_episodes):
        kind = policy_mix[int(kind_indices[i])][0]
        episode_seed = derive_seed(seed, "episode", i)
        obs, actions, rewards = run_episode(spec, kind, episode_seed)
        trajectories.append(Trajectory(i, obs, actions, rewards, kind.tag(), episode_seed))
    return Dataset(spec=spec, trajectories=trajectories)


def partition(
    dataset: Dataset,
    p_demo: float,
    reward_pool_fraction: float = 0.5,
    validation_count: int = 40,
    seed: int = 0,
    min_demos: int = 0,
) -> DatasetPartition:
    """Split a dataset into the annotation pools.

    Demo selection reads success flags, which is annotation simulation, so it
    runs under the "annotation" purpose. ``min_demos`` tops up the demo set
    with further success trajectories (in shuffled order) when independent
    p_demo sampling comes up short; 0 disables the floor.
    """
    if not 0.0 < p_demo <= 1.0:
        raise ConfigError(f"p_demo must be in (0,1], got {p_demo}")
    if not 0.0 < reward_pool_fraction <= 1.0:
        raise ConfigError(f"reward_pool_fraction must be in (0,1], got {reward_pool_fraction}")
    if validation_count < 0:
        raise ConfigError(f"validation_count must be >= 0, got {validation_count}")
    all_ids = sorted(dataset.by_id)
    rng = derive_rng(seed, "partition")
    perm = rng.permutation(all_ids)
    pool_size = max(1, round(reward_pool_fraction * len(all_ids)))
    pool_ids = sorted(int(i) for i in perm[:pool_size])

    with GATE.allow("annotation"):
        success_ids = [i for i in pool_ids if dataset.get(i).is_success]
    if not success_ids:
        raise PartitionError(
            "no success trajectories in the reward pool; "
            "generate more episodes or use an easier grid spec"
        )
    keep = rng.random(len(success_ids)) < p_demo
    demo_ids = {i for i, k in zip(success_ids, keep) if k}
    if len(demo_ids) < min_demos:
        spare = [i for i in rng.permutation(success_ids) if i not in demo_ids]
        demo_ids.update(int(i) for i in spare[: min_demos - len(demo_ids)])
    unlabeled_ids = [i for i in pool_ids if i not in demo_ids]

    # Refinement halves: stratified by demo/unlabeled membership.
    half_a: list[int] = []
    half_b: list[int] = []
    for stratum in (sorted(demo_ids), unlabeled_ids):
        order = rng.permutation(stratum)
        cut = (len(order) + 1) // 2
        half_a.extend(int(i) for i in order[:cut])
        half_b.extend(int(i) for i in order[cut:])

    if validation_count > len(unlabeled_ids):
        raise PartitionError(
            f"validation_count {validation_count} exceeds unlabeled pool size {len(unlabeled_ids)}"
        )
    validation = rng.permutation(unlabeled_ids)[:validation_count]

    part = DatasetPartition(
        all_ids=tuple(all_ids),
        reward_pool_ids=tuple(pool_ids),
        policy_pool_ids=tuple(all_ids),
        demo_ids=tuple(sorted(demo_ids)),
        unlabeled_ids=tuple(unlabeled_ids),
        half_a_ids=tuple(sorted(half_a)),
        half_b_ids=tuple(sorted(half_b)),
        validation_ids=tuple(sorted(int(i) for i in validation)),
    )
    part.check(dataset)
    return part


def annotate_timesteps(dataset: Dataset, demo_ids: tuple[int, ...]) -> TimestepAnnotation:
    """Simulate a perfect per-timestep annotator on the given episodes."""
    labels: dict[int, np.ndarray] = {}
    with GATE.allow("annotation"):
        for traj_id in demo_ids:
            labels[traj_id] = dataset.get(traj_id).gt_rewards.astype(np.float64)
    return TimestepAnnotation(labels=labels)


# ---------------------------------------------------------------------------
# Serialization. Dataset files are JSON-lines: a header record, then one
# record per trajectory holding only (id, kind, episode seed, actions,
# rewards); observations are deterministic replays of the actions, so they
# are reconstructed on load and the stored rewards double as an integrity
# check. Partition files are a single JSON document holding the id lists and
# the annotation map.
# ---------------------------------------------------------------------------


def replay_episode(
    spec: GridSpec, episode_seed: int, actions: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Reconstruct (observations, rewards) from a logged action sequence."""
    state = reset(spec, episode_seed)
    observations = [observe(spec, state)]
    rewards = [0]
    for action in actions[1:]:
        state, reward, _ = step(spec, state, int(action))
        observations.append(observe(spec, state))
        rewards.append(reward)
    return np.array(observations), np.array(rewards)


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    path = Path(path)
    spec = dataset.spec
    header = {
        "format": DATASET_FORMAT,
        "spec": {
            "width": spec.width,
            "height": spec.height,
            "noise_dims": spec.noise_dims,
            "success_grace": spec.success_grace,
            "max_steps": spec.max_steps,
            "goal_placement": spec.goal_placement,
        },
    }
    with path.open("w") as fh:
        fh.write(json.dumps(header) + "\n")
        for traj in dataset.trajectories:
            record = {
                "id": traj.id,
                "behaviour_kind": traj.behaviour_kind,
                "episode_seed": traj.episode_seed,
                "actions": traj.actions.tolist(),
                "gt_rewards": traj._gt_rewards.tolist(),
            }
            fh.write(json.dumps(record) + "\n")


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    spec: GridSpec | None = None
    trajectories = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: line {lineno}: invalid JSON: {exc}") from None
            if lineno == 1:
                if record.get("format") != DATASET_FORMAT:
                    raise ParseError(f"{path}: line 1: expected {DATASET_FORMAT} header")
                try:
                    spec = GridSpec(**record["spec"])
                except (KeyError, TypeError, ConfigError) as exc:
                    raise ParseError(f"{path}: line 1: bad spec header: {exc}") from None
                continue
            try:
                actions = np.array(record["actions"], dtype=np.int64)
                observations, rewards = replay_episode(spec, record["episode_seed"], actions)
                if not np.array_equal(rewards, np.array(record["gt_rewards"])):
                    raise ParseError(
                        f"{path}: line {lineno}: stored rewards do not match the replay"
                    )
                trajectories.append(
                    Trajectory(
                        traj_id=record["id"],
                        observations=observations,
                        actions=actions,
                        gt_rewards=rewards,
                        behaviour_kind=record["behaviour_kind"],
                        episode_seed=record["episode_seed"],
                    )
                )
            except (KeyError, TypeError, ValueError, DataError, UsageError) as exc:
                raise ParseError(f"{path}: line {lineno}: bad trajectory record: {exc}") from None
    if spec is None:
        raise ParseError(f"{path}: missing dataset header line")
    return Dataset(spec=spec, trajectories=trajectories)


def save_partition(
    part: DatasetPartition,
    path: str | Path,
    annotation: TimestepAnnotation | None = None,
) -> None:
    doc = {
        "format": PARTITION_FORMAT,
        "all_ids": list(part.all_ids),
        "reward_pool_ids": list(part.reward_pool_ids),
        "policy_pool_ids": list(part.policy_pool_ids),
        "demo_ids": list(part.demo_ids),
        "unlabeled_ids": list(part.unlabeled_ids),
        "half_a_ids": list(part.half_a_ids),
        "half_b_ids": list(part.half_b_ids),
        "validation_ids": list(part.validation_ids),
        "annotation": (
            {str(k): v.tolist() for k, v in annotation.labels.items()}
            if annotation is not None
            else None
        ),
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_partition(path: str | Path) -> tuple[DatasetPartition, TimestepAnnotation | None]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from None
    if doc.get("format") != PARTITION_FORMAT:
        raise ParseError(f"{path}: expected {PARTITION_FORMAT} document")
    try:
        part = DatasetPartition(
            **{
                name: tuple(doc[name])
                for name in (
                    "all_ids",
                    "reward_pool_ids",
                    "policy_pool_ids",
                    "demo_ids",
                    "unlabeled_ids",
                    "half_a_ids",
                    "half_b_ids",
                    "validation_ids",
                )
            }
        )
    except KeyError as exc:
        raise ParseError(f"{path}: missing field {exc}") from None
    annotation = None
    if doc.get("annotation") is not None:
        annotation = TimestepAnnotation(
            labels={int(k): np.array(v, dtype=np.float64) for k, v in doc["annotation"].items()}
        )
    return part, annotation
