"""End-to-end acceptance suite: numeric oracles plus study-level outcome gates.

The fast tests check components against independent oracles (finite
differences, brute-force threshold enumeration, hand-recomputed labels, value
iteration). The slow tests run the two bundled study presets once per module
and gate the headline comparisons on their summary CSVs. Each test prints one
summary line; study build time is charged to every consumer's runtime budget,
so a budget always covers reproducing that criterion from scratch.
"""

import csv
import filecmp
import json
import time
from dataclasses import dataclass
from itertools import product
from pathlib import Path
from statistics import mean, pstdev

import numpy as np
import pytest

from rewardlab.agents import AgentConfig, crr_train, evaluate_policy
from rewardlab.data import (
    GATE,
    Dataset,
    Trajectory,
    generate_dataset,
    load_dataset,
    load_partition,
    partition,
)
from rewardlab.env import STAY, BehaviourPolicyKind, GridSpec
from rewardlab.errors import GroundTruthAccessError
from rewardlab.harness import RunPaths, preset_config, run_study, validation_report
from rewardlab.learner import (
    TrainSpec,
    finite_diff_check,
    forward,
    init_mlp,
    soft_bce_loss_and_grad,
    td_loss_and_grad,
    weighted_ce_loss_and_grad,
)
from rewardlab.metrics import ScoredTimesteps, auc_pr
from rewardlab.seeding import derive_rng, derive_seed
from rewardlab.strategies import (
    bootstrap_refinement,
    ensemble_model,
    refine,
    relabel,
    sqil_labels,
    t0_from_fraction,
    tgr_labels,
)


def report(name: str, ok: bool, detail: str) -> None:
    """One human-readable line per acceptance check."""
    print(f"[acceptance] {name}: {'PASS' if ok else 'FAIL'} ({detail})")


@dataclass(frozen=True)
class StudyRun:
    paths: RunPaths
    build_seconds: float
    success: dict[tuple[str, str], float]
    seeds: tuple[int, ...]

    def mean_success(self, strategy: str) -> float:
        return self.success[(strategy, "mean")]


def _load_summary(paths: RunPaths) -> dict[tuple[str, str], float]:
    out = {}
    with paths.summary.open() as fh:
        for row in csv.DictReader(fh):
            out[(row["strategy"], row["seed"])] = float(row["final_success_rate"])
    return out


def _run_preset(name: str, out_dir) -> StudyRun:
    config = preset_config(name, out_dir=str(out_dir))
    start = time.perf_counter()
    run_study(config)
    build = time.perf_counter() - start
    paths = RunPaths.create(config.out_dir)
    return StudyRun(
        paths=paths,
        build_seconds=build,
        success=_load_summary(paths),
        seeds=tuple(config.seeds),
    )


@pytest.fixture(scope="module")
def episode_study(tmp_path_factory) -> StudyRun:
    return _run_preset("episode-level-study", tmp_path_factory.mktemp("episode-study"))


@pytest.fixture(scope="module")
def timestep_study(tmp_path_factory) -> StudyRun:
    return _run_preset("timestep-level-study", tmp_path_factory.mktemp("timestep-study"))


# --- component oracles ------------------------------------------------------


def test_gradient_oracle():
    start = time.perf_counter()
    worst = 0.0
    for case in range(32):
        rng = derive_rng(4000, "fd", case)
        in_dim = int(rng.integers(3, 9))
        hidden = int(rng.integers(4, 10))
        n = int(rng.integers(2, 7))
        x = rng.normal(size=(n, in_dim))
        for loss_name in ("bce", "ce", "td"):
            if loss_name == "bce":
                mlp = init_mlp((in_dim, hidden, hidden, 1), "logistic", int(rng.integers(1e6)))
                targets = rng.random(n)
                loss_fn = lambda m: soft_bce_loss_and_grad(m, x, targets)
            elif loss_name == "ce":
                mlp = init_mlp((in_dim, hidden, hidden, 5), "softmax", int(rng.integers(1e6)))
                actions = rng.integers(0, 5, size=n)
                weights = rng.random(n) * 2
                loss_fn = lambda m: weighted_ce_loss_and_grad(m, x, actions, weights)
            else:
                mlp = init_mlp((in_dim, hidden, hidden, 5), "linear", int(rng.integers(1e6)))
                actions = rng.integers(0, 5, size=n)
                targets = rng.normal(size=n)
                loss_fn = lambda m: td_loss_and_grad(m, x, actions, targets)
            # Random biases keep every ReLU pre-activation away from the exact
            # kink, where a central difference is not a valid reference.
            for b in mlp.biases:
                b[:] = rng.uniform(-0.5, 0.5, size=b.shape)
            worst = max(worst, finite_diff_check(mlp, loss_fn, seed=case))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 30
    report("gradient-oracle", ok, f"worst rel err {worst:.2e}, {elapsed:.1f}s")
    assert worst < 1e-4
    assert elapsed < 30


def oracle_auc_pr(scores: list[float], labels: list[int]) -> float:
    """Brute force: enumerate every distinct score as a threshold and sum the
    rectangle areas between consecutive recall levels."""
    thresholds = sorted(set(scores), reverse=True)
    n_pos = sum(labels)
    area, prev_recall = 0.0, 0.0
    for threshold in thresholds:
        tp = sum(1 for s, y in zip(scores, labels) if s >= threshold and y == 1)
        predicted = sum(1 for s in scores if s >= threshold)
        recall = tp / n_pos
        area += (recall - prev_recall) * (tp / predicted)
        prev_recall = recall
    return area


def test_auc_pr_matches_brute_force():
    start = time.perf_counter()
    hand = auc_pr(ScoredTimesteps(np.array([0.9, 0.8, 0.7]), np.array([1, 0, 1])))
    assert abs(hand - 5.0 / 6.0) <= 1e-12

    worst = 0.0
    for i in range(200):
        rng = derive_rng(4100, "aucpr", i)
        n = int(rng.integers(1, 21))
        labels = rng.integers(0, 2, size=n)
        if labels.sum() == 0:
            labels[int(rng.integers(n))] = 1
        # Low-precision rounding guarantees plenty of tied scores.
        scores = np.round(rng.random(n), int(rng.integers(1, 4)))
        got = auc_pr(ScoredTimesteps(scores, labels))
        worst = max(worst, abs(got - oracle_auc_pr(scores.tolist(), labels.tolist())))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 5
    report("auc-pr-oracle", ok, f"worst abs diff {worst:.2e}, hand case 5/6, {elapsed:.2f}s")
    assert worst <= 1e-12
    assert elapsed < 5


def test_label_construction_conformance():
    mix = [(BehaviourPolicyKind("expert", 0.2), 0.6), (BehaviourPolicyKind("random"), 0.4)]
    datasets = [
        generate_dataset(
            GridSpec(width=w, height=w, noise_dims=0, success_grace=2, max_steps=m),
            40,
            mix,
            seed=s,
        )
        for w, m, s in ((4, 8, 1), (5, 10, 2), (6, 12, 3))
    ]
    rng = np.random.default_rng(99)
    start = time.perf_counter()
    for i in range(500):
        dataset = datasets[i % 3]
        part = partition(
            dataset,
            p_demo=float(rng.uniform(0.1, 0.9)),
            reward_pool_fraction=0.5,
            validation_count=0,
            seed=i,
            min_demos=1,
        )
        by_id = {t.id: t for t in dataset.trajectories}
        horizon = max(len(by_id[i]) for i in part.demo_ids)
        t0 = int(rng.integers(0, horizon + 3))
        flat = sqil_labels(part.demo_ids, part.unlabeled_ids, dataset)
        guided = tgr_labels(part.demo_ids, part.unlabeled_ids, dataset, t0=t0)
        # Recompute both label sets from their definitions, timestep by
        # timestep, with 1-based time t = record index + 1.
        for tid in part.demo_ids:
            for k in range(len(by_id[tid])):
                assert flat.targets[(tid, k)] == 1.0
                assert guided.targets[(tid, k)] == (0.0 if k + 1 <= t0 else 1.0)
        for tid in part.unlabeled_ids:
            for k in range(len(by_id[tid])):
                assert flat.targets[(tid, k)] == 0.0
                assert guided.targets[(tid, k)] == 0.0
        assert set(flat.targets) == set(guided.targets)
        # t0 = 0 degenerates to the flat labels; t0 past the horizon zeroes
        # every demo timestep.
        assert tgr_labels(part.demo_ids, part.unlabeled_ids, dataset, t0=0).targets == flat.targets
        late = tgr_labels(part.demo_ids, part.unlabeled_ids, dataset, t0=horizon)
        assert all(
            late.targets[(tid, k)] == 0.0 for tid in part.demo_ids for k in range(len(by_id[tid]))
        )
    elapsed = time.perf_counter() - start
    ok = elapsed < 10
    report("label-conformance", ok, f"500 partitions conform, {elapsed:.2f}s")
    assert elapsed < 10


def test_critic_matches_value_iteration():
    # Two-state chain: action 1 moves s0 to the terminal s1 with reward 1,
    # action 0 self-loops on s0 with reward 0. Value iteration at discount
    # 0.9 gives Q(s0, a1) = 1 and Q(s0, a0) = 0.9 * V(s0) = 0.9.
    spec = GridSpec(width=2, height=2, noise_dims=0, success_grace=1, max_steps=6)
    obs_dim = 2 * spec.width * spec.height
    s0, s1 = np.eye(obs_dim)[0], np.eye(obs_dim)[1]

    def chain_episode(tid: int, n_loops: int) -> Trajectory:
        obs = [s0] + [s0] * n_loops + [s1]
        actions = [STAY] + [0] * n_loops + [1]
        rewards = [0] * (1 + n_loops) + [1]
        return Trajectory(tid, np.array(obs), np.array(actions), np.array(rewards), "expert", tid)

    start = time.perf_counter()
    trajectories = [chain_episode(i, 1 + i % 3) for i in range(60)]
    dataset = Dataset(spec, trajectories)
    rewards = {t.id: np.array([0.0] * (len(t) - 1) + [1.0]) for t in trajectories}
    config = AgentConfig(
        kind="crr",
        discount=0.9,
        weight_rule="binary",
        target_sync=50,
        train_spec=TrainSpec(batch_size=128, steps=2500, lr=1e-3, seed=0),
    )
    policy, critic = crr_train([t.id for t in trajectories], dataset, rewards, config)
    q0 = forward(critic, s0[None, :])[0]
    mass = forward(policy, s0[None, :])[0][1]
    err = max(abs(q0[1] - 1.0), abs(q0[0] - 0.9))
    elapsed = time.perf_counter() - start
    ok = err < 0.05 and mass > 0.9 and elapsed < 60
    report("critic-oracle", ok, f"max Q err {err:.2e}, mass on optimal {mass:.4f}, {elapsed:.1f}s")
    assert abs(q0[1] - 1.0) < 0.05
    assert abs(q0[0] - 0.9) < 0.05
    assert mass > 0.9
    assert elapsed < 60


# --- study-level outcome gates ----------------------------------------------


def test_bc_trails_ground_truth_agent(episode_study):
    start = time.perf_counter()
    run = episode_study
    per_seed = [
        (run.success[("bc", str(s))], run.success[("gt", str(s))]) for s in run.seeds
    ]
    ratio_of_means = run.mean_success("bc") / run.mean_success("gt")
    mean_of_ratios = mean(b / g for b, g in per_seed)
    elapsed = run.build_seconds + (time.perf_counter() - start)
    ok = (
        all(b < g for b, g in per_seed)
        and 0.2 <= ratio_of_means <= 0.85
        and elapsed < 900
    )
    report(
        "bc-gap",
        ok,
        f"bc/gt mean ratio {ratio_of_means:.3f} (per-seed mean {mean_of_ratios:.3f}), "
        f"{elapsed:.0f}s incl. study",
    )
    for b, g in per_seed:
        assert b < g
    assert 0.2 <= ratio_of_means <= 0.85
    assert elapsed < 900


def test_semi_supervision_recovers_ground_truth(timestep_study):
    start = time.perf_counter()
    run = timestep_study
    # reward_metrics.csv rows carry no seed column; within one strategy they
    # appear in config seed order, so pairing by position pairs by seed.
    aucs: dict[str, list[float]] = {}
    with run.paths.reward_metrics.open() as fh:
        for row in csv.DictReader(fh):
            aucs.setdefault(row["strategy"], []).append(float(row["auc_pr"]))
    demo_only, with_flat = aucs["sup_demo"], aucs["sup_and_flat"]
    assert len(demo_only) == len(with_flat) == len(run.seeds)
    policy_ratio = run.mean_success("sup_and_flat") / run.mean_success("gt")
    elapsed = run.build_seconds + (time.perf_counter() - start)
    ok = (
        all(wf >= do for do, wf in zip(demo_only, with_flat))
        and policy_ratio >= 0.8
        and elapsed < 1200
    )
    report(
        "semi-supervision",
        ok,
        f"val AUC sup_and_flat {with_flat} vs sup_demo {demo_only}, "
        f"policy ratio to gt {policy_ratio:.3f}, {elapsed:.0f}s incl. study",
    )
    for do, wf in zip(demo_only, with_flat):
        assert wf >= do
    assert policy_ratio >= 0.8
    assert elapsed < 1200


def test_refined_time_guided_rewards_beat_flat_labels(episode_study):
    start = time.perf_counter()
    run = episode_study
    refined = run.mean_success("tgr_i")
    flat = run.mean_success("sqil")
    gt = run.mean_success("gt")
    elapsed = run.build_seconds + (time.perf_counter() - start)
    ok = refined >= flat and refined >= 0.75 * gt and elapsed < 1500
    report(
        "refined-vs-flat",
        ok,
        f"tgr_i {refined:.3f} vs sqil {flat:.3f}, vs gt {refined / gt:.3f} of {gt:.3f}, "
        f"{elapsed:.0f}s incl. study",
    )
    assert refined >= flat
    assert refined >= 0.75 * gt
    assert elapsed < 1500


def test_refinement_contracts_config_spread(episode_study):
    start = time.perf_counter()
    run = episode_study
    dataset = load_dataset(run.paths.dataset)
    part, _ = load_partition(run.paths.partition)
    configs = list(product((0.25, 0.4, 0.5), (1e-3, 3e-4)))

    auc_by_iter: dict[int, list[list[float]]] = {0: [], 2: []}
    ret_by_iter: dict[int, list[list[float]]] = {0: [], 2: []}
    for seed in run.seeds:
        aucs = {0: [], 2: []}
        rets = {0: [], 2: []}
        for idx, (fraction, lr) in enumerate(configs):
            spec = TrainSpec(
                batch_size=256, steps=6000, lr=lr, seed=derive_seed(seed, "spread-cell", idx)
            )
            t0 = t0_from_fraction(fraction, dataset.spec.max_steps)

            def run_policy(state, tag: str) -> float:
                rewards = relabel(
                    ensemble_model(state), [dataset.get(i) for i in part.policy_pool_ids]
                )
                agent = AgentConfig(
                    kind="crr",
                    discount=0.9,
                    weight_rule="exponential",
                    beta=0.25,
                    train_spec=TrainSpec(
                        batch_size=256,
                        steps=3000,
                        lr=1e-3,
                        seed=derive_seed(seed, f"spread-agent-{tag}", idx),
                    ),
                )
                policy, _ = crr_train(part.policy_pool_ids, dataset, rewards, agent)
                return evaluate_policy(
                    policy,
                    dataset.spec,
                    n_episodes=100,
                    seed=derive_seed(seed, f"spread-eval-{tag}", idx),
                    mode="sampled",
                ).success_rate

            state = bootstrap_refinement(dataset, part, t0, spec)
            aucs[0].append(validation_report(ensemble_model(state), dataset, part).auc_pr)
            rets[0].append(run_policy(state, "first"))
            for _ in range(2):
                state = refine(dataset, part, state, spec)
            aucs[2].append(validation_report(ensemble_model(state), dataset, part).auc_pr)
            rets[2].append(run_policy(state, "last"))
        for it in (0, 2):
            auc_by_iter[it].append(aucs[it])
            ret_by_iter[it].append(rets[it])

    auc_spread = {it: [pstdev(per_cfg) for per_cfg in auc_by_iter[it]] for it in (0, 2)}
    ret_spread = {it: [pstdev(per_cfg) for per_cfg in ret_by_iter[it]] for it in (0, 2)}
    contracted = sum(s2 <= s0 for s0, s2 in zip(auc_spread[0], auc_spread[2]))
    ret_contracted = sum(s2 <= s0 for s0, s2 in zip(ret_spread[0], ret_spread[2]))
    elapsed = run.build_seconds + (time.perf_counter() - start)
    ok = contracted >= 2 and elapsed < 1500
    report(
        "refinement-spread",
        ok,
        f"val AUC spread per seed iter0 {[f'{s:.4f}' for s in auc_spread[0]]} -> "
        f"iter2 {[f'{s:.4f}' for s in auc_spread[2]]}, contracted on {contracted}/3 seeds; "
        f"ungated policy-return spread iter0 {[f'{s:.4f}' for s in ret_spread[0]]} -> "
        f"iter2 {[f'{s:.4f}' for s in ret_spread[2]]}, contracted on {ret_contracted}/3; "
        f"{elapsed:.0f}s incl. study",
    )
    assert elapsed < 1500
    assert contracted >= 2, (
        "cross-config val AUC spread did not contract by iteration 2 on 2 of 3 seeds: "
        f"iter0 {auc_spread[0]}, iter2 {auc_spread[2]}"
    )


def test_study_runs_are_byte_deterministic(tmp_path):
    # The smallest study cell (the demos-only baseline at one seed), plus the
    # time-guided strategy so reward metrics and relabelled curves are
    # exercised too, run twice from scratch into different directories.
    start = time.perf_counter()
    from rewardlab.harness import PRESETS

    doc = json.loads(json.dumps(PRESETS["episode-level-study"]))
    doc["strategies"] = [s for s in doc["strategies"] if s["label"] in ("bc", "tgr")]
    doc["seeds"] = [0]
    outs = []
    for name in ("first", "second"):
        from rewardlab.config import config_from_dict

        doc["out_dir"] = str(tmp_path / name)
        run_study(config_from_dict(doc))
        outs.append(RunPaths.create(tmp_path / name))
    a, b = outs

    compared = []
    for rel in ("dataset.jsonl", "reward_metrics.csv", "summary.csv"):
        compared.append(rel)
        assert filecmp.cmp(a.out / rel, b.out / rel, shallow=False), f"{rel} differs"
    curve_names = sorted(p.name for p in (a.out / "curves").iterdir())
    assert curve_names == sorted(p.name for p in (b.out / "curves").iterdir())
    for name in curve_names:
        compared.append(f"curves/{name}")
        assert filecmp.cmp(
            a.out / "curves" / name, b.out / "curves" / name, shallow=False
        ), f"curves/{name} differs"
    elapsed = time.perf_counter() - start
    ok = elapsed < 600
    report(
        "determinism",
        ok,
        f"{len(compared)} artifacts byte-identical across fresh re-runs, {elapsed:.0f}s",
    )
    assert elapsed < 600


def test_ground_truth_is_quarantined(tmp_path):
    from rewardlab.config import config_from_dict
    from rewardlab.data import AUTHORIZED_PURPOSES

    doc = {
        "preset": "tiny-all",
        "out_dir": str(tmp_path / "run"),
        "env": {
            "width": 5,
            "height": 5,
            "noise_dims": 0,
            "success_grace": 2,
            "max_steps": 10,
            "goal_placement": "fixed",
        },
        "dataset": {
            "n_episodes": 100,
            "seed": 3,
            "policy_mix": [
                {"kind": "expert", "epsilon": 0.2, "weight": 0.5},
                {"kind": "random", "weight": 0.5},
            ],
        },
        "partition": {
            "p_demo": 0.25,
            "reward_pool_fraction": 0.5,
            "validation_count": 8,
            "min_demos": 2,
            "seed": 5,
        },
        "strategies": [
            {"label": "bc", "kind": "bc"},
            {"label": "gt", "kind": "gt"},
            {"label": "sqil", "kind": "sqil"},
            {"label": "oril", "kind": "oril", "oril_reg": "pu",
             "train": {"steps": 60, "batch_size": 64, "lr": 1e-3}},
            {"label": "tgr", "kind": "tgr", "t0_fraction": 0.3,
             "train": {"steps": 60, "batch_size": 64, "lr": 1e-3}},
            {"label": "tgr_i", "kind": "tgr_i", "t0_fraction": 0.3, "refinement_iters": 1,
             "train": {"steps": 60, "batch_size": 64, "lr": 1e-3}},
            {"label": "sup_demo", "kind": "sup_demo",
             "train": {"steps": 60, "batch_size": 64, "lr": 1e-3}},
            {"label": "sup_and_flat", "kind": "sup_and_flat",
             "train": {"steps": 60, "batch_size": 64, "lr": 1e-3}},
        ],
        "agent": {"kind": "crr", "discount": 0.9,
                  "train": {"steps": 80, "batch_size": 64, "lr": 1e-3}},
        "eval": {"every": 40, "episodes": 20, "mode": "greedy", "seed": 9},
        "seeds": [0],
    }
    GATE.reset_counters()
    run_study(config_from_dict(doc))
    purposes = dict(GATE.reads_by_purpose)
    unauthorized = GATE.unauthorized_reads
    ok = unauthorized == 0 and set(purposes) <= set(AUTHORIZED_PURPOSES)
    report(
        "gt-quarantine",
        ok,
        f"unauthorized reads {unauthorized}, purposes seen {sorted(purposes)}",
    )
    assert unauthorized == 0
    assert set(purposes) <= set(AUTHORIZED_PURPOSES)
    assert purposes.get("gt_agent", 0) > 0
    assert purposes.get("validation", 0) > 0
    assert purposes.get("annotation", 0) > 0

    # The barrier itself: any read outside an authorized purpose raises and
    # trips the counter.
    dataset = load_dataset(Path(doc["out_dir"]) / "dataset.jsonl")
    GATE.reset_counters()
    with pytest.raises(GroundTruthAccessError):
        dataset.trajectories[0].gt_rewards
    assert GATE.unauthorized_reads == 1
    GATE.reset_counters()
