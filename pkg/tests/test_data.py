"""Dataset generation, partitioning, annotation, serialization, and the
ground-truth access gate."""

import json

import numpy as np
import pytest

from rewardlab.data import (
    Trajectory,
    GATE,
    Dataset,
    annotate_timesteps,
    generate_dataset,
    load_dataset,
    load_partition,
    partition,
    replay_episode,
    run_episode,
    save_dataset,
    save_partition,
)
from rewardlab.env import BehaviourPolicyKind, GridSpec
from rewardlab.errors import (
    DataError,
    GroundTruthAccessError,
    ParseError,
    PartitionError,
)

SMALL = GridSpec(width=4, height=4, noise_dims=2, success_grace=2, max_steps=12)
MIX = [
    (BehaviourPolicyKind("expert", epsilon=0.2), 0.4),
    (BehaviourPolicyKind("wandering"), 0.3),
    (BehaviourPolicyKind("random"), 0.3),
]


@pytest.fixture(scope="module")
def small_dataset():
    return generate_dataset(SMALL, 120, MIX, seed=5)


def test_run_episode_record_alignment():
    # T env steps produce T+1 records: the reset record plus one per step,
    # with record 0 carrying the stay action and reward 0
    obs, actions, rewards = run_episode(SMALL, BehaviourPolicyKind("random"), episode_seed=3)
    n = len(actions)
    assert obs.shape == (n, SMALL.obs_dim)
    assert actions[0] == 4
    assert rewards[0] == 0
    assert len(rewards) == n
    assert 2 <= n <= SMALL.max_steps + SMALL.success_grace + 1


def test_generate_dataset_determinism(small_dataset):
    again = generate_dataset(SMALL, 120, MIX, seed=5)
    assert len(again) == len(small_dataset) == 120
    for a, b in zip(small_dataset.trajectories, again.trajectories):
        assert a == b


def test_generate_dataset_mixes_kinds(small_dataset):
    kinds = {t.behaviour_kind for t in small_dataset.trajectories}
    assert kinds == {"expert(0.2)", "wandering(6)", "random"}


def test_dataset_lookup(small_dataset):
    assert small_dataset.get(0).id == 0
    with pytest.raises(DataError):
        small_dataset.get(10_000)


def test_gate_blocks_unauthorized_reads(small_dataset):
    GATE.reset_counters()
    traj = small_dataset.get(0)
    with pytest.raises(GroundTruthAccessError):
        traj.gt_rewards
    assert GATE.unauthorized_reads == 1
    with GATE.allow("evaluation"):
        traj.gt_rewards
    assert GATE.reads_by_purpose["evaluation"] == 1
    GATE.reset_counters()
    assert GATE.unauthorized_reads == 0


def test_gate_rejects_unknown_purpose():
    with pytest.raises(GroundTruthAccessError):
        with GATE.allow("curiosity"):
            pass


def test_observations_readable_without_gate(small_dataset):
    obs = small_dataset.get(1).observations
    assert obs.dtype == np.float64
    assert not obs.flags.writeable


def test_partition_invariants(small_dataset):
    for seed in range(60):
        part = partition(
            small_dataset, p_demo=0.25, reward_pool_fraction=0.5,
            validation_count=10, seed=seed,
        )
        pool = set(part.reward_pool_ids)
        assert set(part.demo_ids) | set(part.unlabeled_ids) == pool
        assert not set(part.demo_ids) & set(part.unlabeled_ids)
        assert set(part.half_a_ids) | set(part.half_b_ids) == pool
        assert not set(part.half_a_ids) & set(part.half_b_ids)
        assert set(part.validation_ids) <= set(part.unlabeled_ids)
        assert len(part.validation_ids) == 10
        assert set(part.policy_pool_ids) == set(part.all_ids)
        assert pool <= set(part.all_ids)
        with GATE.allow("annotation"):
            for i in part.demo_ids:
                assert small_dataset.get(i).gt_rewards.sum() > 0
        part.check(small_dataset)


def test_partition_demo_rate(small_dataset):
    with GATE.allow("annotation"):
        successes = [
            t.id for t in small_dataset.trajectories if t.gt_rewards.sum() > 0
        ]
    counts = [
        len(partition(small_dataset, p_demo=0.5, validation_count=10, seed=s).demo_ids)
        for s in range(40)
    ]
    # binomial(n/2 successes in pool, 0.5): mean within 3 sigma over 40 draws
    pool_successes = len(successes) / 2
    mean = np.mean(counts)
    sigma = np.sqrt(pool_successes * 0.25) / np.sqrt(40)
    assert abs(mean - pool_successes * 0.5) < 3 * sigma + 1


def test_partition_min_demos(small_dataset):
    part = partition(small_dataset, p_demo=0.001, min_demos=8, validation_count=10, seed=2)
    assert len(part.demo_ids) >= 8


def test_partition_needs_successes():
    spec = GridSpec(width=3, height=3, noise_dims=0, success_grace=1, max_steps=2)
    trajs = [
        Trajectory(
            i,
            np.zeros((3, spec.obs_dim)),
            np.array([4, 0, 0]),
            np.zeros(3, dtype=np.int64),
            "random",
            episode_seed=i,
        )
        for i in range(6)
    ]
    failures = Dataset(spec=spec, trajectories=trajs)
    with pytest.raises(PartitionError):
        partition(failures, p_demo=0.5, validation_count=2, seed=0)


def test_annotation_copies_ground_truth(small_dataset):
    part = partition(small_dataset, p_demo=0.25, validation_count=10, seed=3)
    ann = annotate_timesteps(small_dataset, part.demo_ids)
    assert set(ann.labels) == set(part.demo_ids)
    with GATE.allow("annotation"):
        for i in part.demo_ids:
            assert np.array_equal(ann.labels[i], small_dataset.get(i).gt_rewards)


def test_annotation_unknown_id(small_dataset):
    with pytest.raises(DataError):
        annotate_timesteps(small_dataset, (10_000,))


def test_replay_episode_matches_generation(small_dataset):
    traj = small_dataset.get(7)
    obs, rewards = replay_episode(SMALL, traj.episode_seed, traj.actions)
    assert np.array_equal(obs, traj.observations)
    with GATE.allow("evaluation"):
        assert np.array_equal(rewards, traj.gt_rewards)


def test_dataset_round_trip(tmp_path, small_dataset):
    path = tmp_path / "ds.jsonl"
    save_dataset(small_dataset, path)
    loaded = load_dataset(path)
    assert len(loaded) == len(small_dataset)
    assert loaded.spec == small_dataset.spec
    for a, b in zip(small_dataset.trajectories, loaded.trajectories):
        assert a == b


def test_load_rejects_malformed_line(tmp_path, small_dataset):
    path = tmp_path / "ds.jsonl"
    save_dataset(small_dataset, path)
    lines = path.read_text().splitlines()
    lines[3] = lines[3][:-10]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError, match="line 4"):
        load_dataset(path)


def test_load_rejects_tampered_rewards(tmp_path, small_dataset):
    path = tmp_path / "ds.jsonl"
    save_dataset(small_dataset, path)
    lines = path.read_text().splitlines()
    record = json.loads(lines[2])
    record["gt_rewards"] = [1 - r for r in record["gt_rewards"]]
    lines[2] = json.dumps(record)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError, match="replay"):
        load_dataset(path)


def test_load_rejects_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    with pytest.raises(ParseError):
        load_dataset(path)


def test_partition_round_trip(tmp_path, small_dataset):
    part = partition(small_dataset, p_demo=0.25, validation_count=8, seed=4)
    ann = annotate_timesteps(small_dataset, part.demo_ids)
    path = tmp_path / "part.json"
    save_partition(part, path, ann)
    loaded, loaded_ann = load_partition(path)
    assert loaded == part
    assert set(loaded_ann.labels) == set(ann.labels)
    for k in ann.labels:
        assert np.array_equal(loaded_ann.labels[k], ann.labels[k])


def test_partition_round_trip_without_annotation(tmp_path, small_dataset):
    part = partition(small_dataset, p_demo=0.25, validation_count=10, seed=4)
    path = tmp_path / "part.json"
    save_partition(part, path, None)
    loaded, loaded_ann = load_partition(path)
    assert loaded == part
    assert loaded_ann is None


def test_dataset_rejects_mixed_dims(small_dataset):
    other = generate_dataset(GridSpec(width=3, height=3, noise_dims=0), 2, MIX, seed=1)
    with pytest.raises(DataError):
        Dataset(spec=SMALL, trajectories=list(small_dataset.trajectories) + list(other.trajectories))
