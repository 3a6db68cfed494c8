"""Sparse-binary-reward gridworld with scripted behaviour policies.

The environment is a stand-in for a real robotic task at desk scale: the
agent moves on a small grid toward a goal cell, the reward is 1 exactly on
timesteps where the agent sits on the goal, and the episode ends a fixed
grace period after the first success or at a hard step cap. Observations are
one-hot encodings of the agent and goal cells with appended uniform-noise
distractor dimensions, so a reward classifier cannot simply memorise the
input layout and must learn to ignore noise.

Everything here is a pure function of explicit state plus named RNG streams,
so episode generation is reproducible bit-for-bit from (spec, policy, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, UsageError
from .seeding import derive_rng

# Action ids, in fixed tie-breaking order.
UP, DOWN, LEFT, RIGHT, STAY = 0, 1, 2, 3, 4
N_ACTIONS = 5
# (dx, dy) per action id; y grows downward.
ACTION_DELTAS = ((0, -1), (0, 1), (-1, 0), (1, 0), (0, 0))


@dataclass(frozen=True)
class GridSpec:
    """Static description of one task instance."""

    width: int = 7
    height: int = 7
    noise_dims: int = 8
    success_grace: int = 5
    max_steps: int = 60
    goal_placement: str = "fixed"  # "fixed" | "random-per-episode"

    def __post_init__(self) -> None:
        if self.width < 2 or self.height < 2:
            raise ConfigError(f"grid must be at least 2x2, got {self.width}x{self.height}")
        if self.max_steps < 1:
            raise ConfigError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.success_grace < 0:
            raise ConfigError(f"success_grace must be >= 0, got {self.success_grace}")
        if self.noise_dims < 0:
            raise ConfigError(f"noise_dims must be >= 0, got {self.noise_dims}")
        if self.goal_placement not in ("fixed", "random-per-episode"):
            raise ConfigError(f"unknown goal_placement {self.goal_placement!r}")

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    @property
    def obs_dim(self) -> int:
        return 2 * self.n_cells + self.noise_dims

    def cell_index(self, cell: tuple[int, int]) -> int:
        x, y = cell
        return y * self.width + x


@dataclass(frozen=True)
class EnvState:
    """Immutable snapshot of one episode."""

    agent_cell: tuple[int, int]
    goal_cell: tuple[int, int]
    t: int
    steps_since_success: int | None  # None until the first success step
    episode_seed: int  # drives the observation noise stream

    def done(self, spec: GridSpec) -> bool:
        if self.t >= spec.max_steps:
            return True
        return (
            self.steps_since_success is not None
            and self.steps_since_success >= spec.success_grace
        )


@dataclass(frozen=True)
class BehaviourPolicyKind:
    """Scripted data-collection policy.

    expert(epsilon): move toward the goal, drifting to a uniform random
    action with probability epsilon. random: uniform over all actions.
    wandering(switch_t): expert(0) until step switch_t, then random.
    """

    kind: str  # "expert" | "random" | "wandering"
    epsilon: float = 0.0
    switch_t: int = 6

    def __post_init__(self) -> None:
        if self.kind not in ("expert", "random", "wandering"):
            raise ConfigError(f"unknown behaviour kind {self.kind!r}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError(f"epsilon must be in [0,1], got {self.epsilon}")

    def tag(self) -> str:
        """Short provenance string stored on trajectories."""
        if self.kind == "expert":
            return f"expert({self.epsilon:g})"
        if self.kind == "wandering":
            return f"wandering({self.switch_t})"
        return "random"


def reset(spec: GridSpec, seed: int) -> EnvState:
    """Start an episode; the agent never starts on the goal cell."""
    rng = derive_rng(seed, "reset")
    if spec.goal_placement == "fixed":
        goal = (spec.width - 1, spec.height - 1)
    else:
        goal = (int(rng.integers(spec.width)), int(rng.integers(spec.height)))
    while True:
        agent = (int(rng.integers(spec.width)), int(rng.integers(spec.height)))
        if agent != goal:
            break
    return EnvState(
        agent_cell=agent,
        goal_cell=goal,
        t=0,
        steps_since_success=None,
        episode_seed=seed,
    )


def step(spec: GridSpec, state: EnvState, action: int) -> tuple[EnvState, int, bool]:
    """Apply one action; returns (next_state, gt_reward, done).

    Movement is clipped at the grid boundary. The reward is 1 iff the new
    agent cell is the goal cell. The grace countdown keeps running even if
    the agent later leaves the goal.
    """
    if state.done(spec):
        raise UsageError("step() called on a finished episode")
    if not 0 <= action < N_ACTIONS:
        raise UsageError(f"action id must be in 0..{N_ACTIONS - 1}, got {action}")
    dx, dy = ACTION_DELTAS[action]
    x = min(max(state.agent_cell[0] + dx, 0), spec.width - 1)
    y = min(max(state.agent_cell[1] + dy, 0), spec.height - 1)
    reward = 1 if (x, y) == state.goal_cell else 0
    if state.steps_since_success is None:
        since = 0 if reward == 1 else None
    else:
        since = state.steps_since_success + 1
    new_state = replace(
        state, agent_cell=(x, y), t=state.t + 1, steps_since_success=since
    )
    return new_state, reward, new_state.done(spec)


def observe(spec: GridSpec, state: EnvState) -> np.ndarray:
    """[one-hot(agent), one-hot(goal), noise] observation vector.

    Noise dims are a pure function of (episode seed, t), so repeated calls
    at the same episode step return identical vectors.
    """
    obs = np.zeros(spec.obs_dim, dtype=np.float64)
    obs[spec.cell_index(state.agent_cell)] = 1.0
    obs[spec.n_cells + spec.cell_index(state.goal_cell)] = 1.0
    if spec.noise_dims:
        noise_rng = derive_rng(state.episode_seed, "obs-noise", state.t)
        obs[2 * spec.n_cells :] = noise_rng.uniform(0.0, 1.0, size=spec.noise_dims)
    return obs


def _expert_action(state: EnvState) -> int:
    """Action minimizing the resulting Manhattan distance, lowest id wins ties.

    Distances are computed without boundary clipping; a clipped move never
    beats the true minimizer, so the argmin is unaffected.
    """
    gx, gy = state.goal_cell
    best_action, best_dist = STAY, None
    for action, (dx, dy) in enumerate(ACTION_DELTAS):
        x = state.agent_cell[0] + dx
        y = state.agent_cell[1] + dy
        dist = abs(gx - x) + abs(gy - y)
        if best_dist is None or dist < best_dist:
            best_action, best_dist = action, dist
    return best_action


def behaviour_action(
    kind: BehaviourPolicyKind, state: EnvState, rng: np.random.Generator
) -> int:
    """Sample the scripted policy's action for the current state."""
    if kind.kind == "random":
        return int(rng.integers(N_ACTIONS))
    if kind.kind == "wandering":
        if state.t < kind.switch_t:
            return _expert_action(state)
        return int(rng.integers(N_ACTIONS))
    # expert(epsilon); at epsilon == 0 no drift draw is consumed
    if kind.epsilon > 0.0 and rng.random() < kind.epsilon:
        return int(rng.integers(N_ACTIONS))
    return _expert_action(state)
