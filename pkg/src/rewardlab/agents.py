"""Offline policy learning (BC and CRR) plus rollout evaluation.

Trajectories store T+1 records for T environment steps, so the transition
t -> t+1 pairs (obs[t], action[t+1], reward[t+1], obs[t+1]); the last record
of an episode is terminal and bootstraps 0. Rewards arrive as a parallel
dict keyed by trajectory id, which is how both predicted and ground-truth
reward channels are fed in without the agent knowing the difference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .env import GridSpec, N_ACTIONS, observe, reset, step
from .errors import DataError, ShapeError, UsageError
from .learner import (
    DEFAULT_HIDDEN,
    AdamState,
    Mlp,
    TrainSpec,
    forward,
    init_mlp,
    optimizer_step,
    td_loss_and_grad,
    weighted_ce_loss_and_grad,
)
from .seeding import derive_rng, derive_seed

WEIGHT_RULES = ("binary", "exponential")


@dataclass(frozen=True)
class AgentConfig:
    """One offline-RL run: agent kind plus critic/weight hyperparameters."""

    kind: str
    discount: float = 0.99
    target_sync: int = 200
    weight_rule: str = "binary"
    beta: float = 1.0
    weight_clip: float = 20.0
    train_spec: TrainSpec = field(default_factory=TrainSpec)

    def __post_init__(self) -> None:
        if self.kind not in ("bc", "crr"):
            raise UsageError(f"unknown agent kind {self.kind!r}")
        if not 0.0 < self.discount <= 1.0:
            raise UsageError("discount must lie in (0, 1]")
        if self.target_sync < 1:
            raise UsageError("target_sync must be positive")
        if self.weight_rule not in WEIGHT_RULES:
            raise UsageError(f"unknown weight rule {self.weight_rule!r}")
        if self.beta <= 0:
            raise UsageError("beta must be positive")
        if self.weight_clip <= 0:
            raise UsageError("weight_clip must be positive")


@dataclass(frozen=True)
class EvalReport:
    """Rollout statistics of one policy in the true environment."""

    mean_return: float
    success_rate: float
    episode_count: int
    seed: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.success_rate <= 1.0:
            raise UsageError("success rate must lie in [0, 1]")
        if self.mean_return < 0.0:
            raise UsageError("mean return must be non-negative")


def _policy_net(obs_dim: int, seed: int) -> Mlp:
    return init_mlp((obs_dim, *DEFAULT_HIDDEN, N_ACTIONS), "softmax", seed)


def _critic_net(obs_dim: int, seed: int) -> Mlp:
    return init_mlp((obs_dim, *DEFAULT_HIDDEN, N_ACTIONS), "linear", seed)


def bc_train(demo_ids, dataset: Dataset, config: AgentConfig, hook=None) -> Mlp:
    """Behavioural cloning on demo state-action pairs; never reads rewards.

    ``hook(step, policy)`` is called with the untrained policy at step 0 and
    after every update, which is how learning curves get their checkpoints.
    """
    demo_ids = tuple(demo_ids)
    if not demo_ids:
        raise UsageError("behavioural cloning requires at least one demonstration")
    xs, acts = [], []
    for traj_id in demo_ids:
        traj = dataset.get(traj_id)
        if len(traj) < 2:
            continue
        xs.append(traj.observations[:-1])
        acts.append(traj.actions[1:])
    if not xs:
        raise UsageError("demonstrations contain no state-action pairs")
    x = np.concatenate(xs)
    actions = np.concatenate(acts)
    spec = config.train_spec
    policy = _policy_net(dataset.obs_dim, derive_seed(spec.seed, "policy-init"))
    opt = AdamState.for_mlp(policy, lr=spec.lr)
    rng = derive_rng(spec.seed, "bc-batches")
    if hook is not None:
        hook(0, policy)
    for step_i in range(spec.steps):
        rows = rng.integers(0, len(x), size=spec.batch_size)
        _, grads = weighted_ce_loss_and_grad(policy, x[rows], actions[rows])
        optimizer_step(policy, grads, opt)
        if hook is not None:
            hook(step_i + 1, policy)
    return policy


@dataclass(frozen=True)
class _TransitionTable:
    """Flat view of every logged transition in the policy pool."""

    obs: np.ndarray        # (M, obs_dim) all records, episode-concatenated
    from_rows: np.ndarray  # (N,) row of s_t
    to_rows: np.ndarray    # (N,) row of s_{t+1}
    actions: np.ndarray    # (N,) action of the transition
    rewards: np.ndarray    # (N,) reward on arrival at s_{t+1}
    terminal: np.ndarray   # (N,) True when s_{t+1} ends its episode


def _build_transitions(
    pool_ids, dataset: Dataset, rewards: dict[int, np.ndarray]
) -> _TransitionTable:
    obs_parts, from_rows, to_rows, acts, rews, terms = [], [], [], [], [], []
    base = 0
    for traj_id in pool_ids:
        traj = dataset.get(traj_id)
        if traj_id not in rewards:
            raise DataError(f"no rewards supplied for trajectory {traj_id}")
        r = np.asarray(rewards[traj_id], dtype=np.float64)
        if len(r) != len(traj):
            raise DataError(
                f"trajectory {traj_id}: {len(r)} rewards for {len(traj)} records"
            )
        n = len(traj)
        obs_parts.append(traj.observations)
        if n >= 2:
            rows = base + np.arange(n - 1)
            from_rows.append(rows)
            to_rows.append(rows + 1)
            acts.append(traj.actions[1:])
            rews.append(r[1:])
            term = np.zeros(n - 1, dtype=bool)
            term[-1] = True
            terms.append(term)
        base += n
    if not from_rows:
        raise DataError("policy pool contains no transitions")
    return _TransitionTable(
        obs=np.concatenate(obs_parts),
        from_rows=np.concatenate(from_rows),
        to_rows=np.concatenate(to_rows),
        actions=np.concatenate(acts),
        rewards=np.concatenate(rews),
        terminal=np.concatenate(terms),
    )


def crr_train(
    policy_pool_ids,
    dataset: Dataset,
    rewards: dict[int, np.ndarray],
    config: AgentConfig,
    hook=None,
) -> tuple[Mlp, Mlp]:
    """Critic-regularized regression on the relabelled policy pool.

    Alternates a one-step TD critic update against a periodically synced
    target copy with a policy update: BC weighted by the critic advantage,
    the baseline being the exact expectation over the 5 actions.
    ``hook(step, policy)`` fires as in bc_train.
    """
    table = _build_transitions(tuple(policy_pool_ids), dataset, rewards)
    spec = config.train_spec
    obs_dim = dataset.obs_dim
    policy = _policy_net(obs_dim, derive_seed(spec.seed, "policy-init"))
    critic = _critic_net(obs_dim, derive_seed(spec.seed, "critic-init"))
    target = critic.clone()
    policy_opt = AdamState.for_mlp(policy, lr=spec.lr)
    critic_opt = AdamState.for_mlp(critic, lr=spec.lr)
    rng = derive_rng(spec.seed, "crr-batches")
    if hook is not None:
        hook(0, policy)
    for step_i in range(spec.steps):
        if step_i % config.target_sync == 0:
            target = critic.clone()
        rows = rng.integers(0, len(table.actions), size=spec.batch_size)
        s = table.obs[table.from_rows[rows]]
        s2 = table.obs[table.to_rows[rows]]
        a = table.actions[rows]
        r = table.rewards[rows]
        term = table.terminal[rows]

        next_probs = forward(policy, s2)
        next_q = forward(target, s2)
        bootstrap = np.where(term, 0.0, np.sum(next_probs * next_q, axis=1))
        y = r + config.discount * bootstrap
        _, critic_grads = td_loss_and_grad(critic, s, a, y)
        optimizer_step(critic, critic_grads, critic_opt)

        q = forward(critic, s)
        probs = forward(policy, s)
        batch_rows = np.arange(len(rows))
        advantage = q[batch_rows, a] - np.sum(probs * q, axis=1)
        if config.weight_rule == "binary":
            weights = (advantage > 0.0).astype(np.float64)
        else:
            weights = np.minimum(np.exp(advantage / config.beta), config.weight_clip)
        _, policy_grads = weighted_ce_loss_and_grad(policy, s, a, weights)
        optimizer_step(policy, policy_grads, policy_opt)
        if hook is not None:
            hook(step_i + 1, policy)
    return policy, critic


def crr_weights(
    critic: Mlp, policy: Mlp, obs: np.ndarray, actions: np.ndarray, config: AgentConfig
) -> np.ndarray:
    """Advantage-based policy-update weights for fixed networks."""
    q = forward(critic, obs)
    probs = forward(policy, obs)
    rows = np.arange(len(actions))
    advantage = q[rows, actions] - np.sum(probs * q, axis=1)
    if config.weight_rule == "binary":
        return (advantage > 0.0).astype(np.float64)
    return np.minimum(np.exp(advantage / config.beta), config.weight_clip)


def evaluate_policy(
    policy: Mlp,
    spec: GridSpec,
    n_episodes: int,
    seed: int,
    mode: str = "greedy",
) -> EvalReport:
    """Roll out the policy in the true environment.

    Episodes advance in lockstep so the policy forward pass is batched, but
    every episode owns its seed and (in sampled mode) its own generator, so
    the report is independent of the batching.
    """
    if n_episodes < 1:
        raise UsageError("n_episodes must be >= 1")
    if mode not in ("greedy", "sampled"):
        raise UsageError(f"unknown eval mode {mode!r}")
    if policy.in_dim != spec.obs_dim:
        raise ShapeError(
            f"policy expects dim {policy.in_dim}, env produces {spec.obs_dim}"
        )
    states = [reset(spec, derive_seed(seed, "eval", i)) for i in range(n_episodes)]
    rngs = [derive_rng(seed, "eval-actions", i) for i in range(n_episodes)]
    returns = np.zeros(n_episodes)
    active = [i for i in range(n_episodes) if not states[i].done(spec)]
    while active:
        obs = np.stack([observe(spec, states[i]) for i in active])
        probs = forward(policy, obs)
        still = []
        for row, i in enumerate(active):
            if mode == "greedy":
                action = int(np.argmax(probs[row]))
            else:
                u = rngs[i].random()
                action = min(int(np.searchsorted(np.cumsum(probs[row]), u)), N_ACTIONS - 1)
            states[i], r, done = step(spec, states[i], action)
            returns[i] += r
            if not done:
                still.append(i)
        active = still
    return EvalReport(
        mean_return=float(returns.mean()),
        success_rate=float(np.mean(returns > 0.0)),
        episode_count=n_episodes,
        seed=seed,
    )
