"""Minimal feed-forward network machinery with analytic gradients.

Three heads cover everything the pipeline trains: a logistic scalar head for
reward classifiers, a softmax head for policies, and a linear multi-output
head for critics. Gradients are hand-derived per loss and verified against a
central-difference oracle, so no autodiff framework is involved anywhere.

All functions treat parameters as plain numpy arrays owned by their training
loop; nothing here keeps hidden state besides the explicit AdamState.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeError, TrainingError, UsageError
from .seeding import derive_rng

PROB_CLAMP = 1e-6

DEFAULT_HIDDEN = (64, 64)

HEADS = ("logistic", "softmax", "linear")


@dataclass(frozen=True)
class TrainSpec:
    """Knobs shared by every mini-batch trainer in the package."""

    batch_size: int = 256
    steps: int = 2000
    lr: float = 1e-3
    seed: int = 0
    clamp: float = PROB_CLAMP

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise UsageError("batch_size must be positive")
        if self.steps < 0:
            raise UsageError("steps must be non-negative")
        if self.lr <= 0:
            raise UsageError("learning rate must be positive")
        if not 0.0 < self.clamp < 0.5:
            raise UsageError("probability clamp must lie in (0, 0.5)")


@dataclass
class Mlp:
    """Fully-connected ReLU network: sizes[0] -> ... -> sizes[-1]."""

    sizes: tuple[int, ...]
    head: str
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def clone(self) -> "Mlp":
        return Mlp(
            sizes=self.sizes,
            head=self.head,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def param_arrays(self) -> list[tuple[str, np.ndarray]]:
        """Named parameter blocks, in a fixed order."""
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"W{i}", w))
            out.append((f"b{i}", b))
        return out

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for _, a in self.param_arrays())


def init_mlp(sizes: tuple[int, ...], head: str, seed: int) -> Mlp:
    """He-style scaled-uniform initialization with an explicit seed."""
    if head not in HEADS:
        raise UsageError(f"unknown head {head!r}, expected one of {HEADS}")
    if len(sizes) < 2:
        raise UsageError("need at least input and output sizes")
    rng = derive_rng(seed, "init")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(sizes=tuple(sizes), head=head, weights=weights, biases=biases)


def _check_input(mlp: Mlp, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != mlp.in_dim:
        raise ShapeError(f"expected input dim {mlp.in_dim}, got shape {x.shape}")
    return x


def _forward_full(mlp: Mlp, x: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Returns (hidden activations incl. input, final pre-activation)."""
    acts = [x]
    h = x
    last = len(mlp.weights) - 1
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = h @ w + b
        if i < last:
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            return acts, z
    raise AssertionError("unreachable")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward(mlp: Mlp, x: np.ndarray, clamp: float = PROB_CLAMP) -> np.ndarray:
    """Head output for a batch: probabilities or values.

    logistic -> (B,) probabilities clamped to [clamp, 1-clamp];
    softmax -> (B, A) action distribution; linear -> (B, A) values.
    """
    x = _check_input(mlp, x)
    _, z = _forward_full(mlp, x)
    if mlp.head == "logistic":
        return np.clip(_sigmoid(z[:, 0]), clamp, 1.0 - clamp)
    if mlp.head == "softmax":
        return _softmax(z)
    return z


def forward_prob(mlp: Mlp, x: np.ndarray, clamp: float = PROB_CLAMP) -> float:
    """Scalar success probability for a single observation."""
    if mlp.head != "logistic":
        raise UsageError("forward_prob requires a logistic head")
    return float(forward(mlp, np.asarray(x), clamp)[0])


def _backward(
    mlp: Mlp, acts: list[np.ndarray], dz: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Backpropagate an output pre-activation gradient to parameter grads."""
    d_weights = [np.empty(0)] * len(mlp.weights)
    d_biases = [np.empty(0)] * len(mlp.biases)
    grad = dz
    for i in range(len(mlp.weights) - 1, -1, -1):
        d_weights[i] = acts[i].T @ grad
        d_biases[i] = grad.sum(axis=0)
        if i > 0:
            grad = (grad @ mlp.weights[i].T) * (acts[i] > 0.0)
    return d_weights, d_biases


Grads = tuple[list[np.ndarray], list[np.ndarray]]


def scale_grads(grads: Grads, c: float) -> Grads:
    return [c * g for g in grads[0]], [c * g for g in grads[1]]


def add_grads(a: Grads, b: Grads) -> Grads:
    return (
        [ga + gb for ga, gb in zip(a[0], b[0])],
        [ga + gb for ga, gb in zip(a[1], b[1])],
    )


def soft_bce_loss_and_grad(
    mlp: Mlp, x: np.ndarray, targets: np.ndarray, clamp: float = PROB_CLAMP
) -> tuple[float, Grads]:
    """Mean binary cross-entropy against soft targets in [0, 1].

    The loss is computed on clamped probabilities, and the gradient is the
    exact gradient of that clamped loss: samples sitting in the clamp region
    contribute zero gradient.
    """
    if mlp.head != "logistic":
        raise UsageError("soft_bce requires a logistic head")
    x = _check_input(mlp, x)
    targets = np.asarray(targets, dtype=np.float64)
    if len(targets) != len(x):
        raise ShapeError("targets length does not match batch size")
    if len(x) == 0:
        raise UsageError("empty batch")
    if targets.min() < 0.0 or targets.max() > 1.0:
        raise UsageError("targets must lie in [0, 1]")
    acts, z = _forward_full(mlp, x)
    p = _sigmoid(z[:, 0])
    p_clamped = np.clip(p, clamp, 1.0 - clamp)
    loss = float(
        np.mean(-targets * np.log(p_clamped) - (1.0 - targets) * np.log(1.0 - p_clamped))
    )
    inside = (p > clamp) & (p < 1.0 - clamp)
    dz = np.where(inside, p - targets, 0.0)[:, None] / len(x)
    return loss, _backward(mlp, acts, dz)


def weighted_ce_loss_and_grad(
    mlp: Mlp, x: np.ndarray, actions: np.ndarray, weights: np.ndarray | None = None
) -> tuple[float, Grads]:
    """Mean weighted categorical cross-entropy -w_i * log pi(a_i | x_i)."""
    if mlp.head != "softmax":
        raise UsageError("categorical CE requires a softmax head")
    x = _check_input(mlp, x)
    if len(x) == 0:
        raise UsageError("empty batch")
    actions = np.asarray(actions, dtype=np.int64)
    if weights is None:
        weights = np.ones(len(x))
    weights = np.asarray(weights, dtype=np.float64)
    acts, z = _forward_full(mlp, x)
    logp = _log_softmax(z)
    rows = np.arange(len(x))
    loss = float(np.mean(-weights * logp[rows, actions]))
    dz = _softmax(z) * weights[:, None]
    dz[rows, actions] -= weights
    dz /= len(x)
    return loss, _backward(mlp, acts, dz)


def td_loss_and_grad(
    mlp: Mlp, x: np.ndarray, actions: np.ndarray, targets: np.ndarray
) -> tuple[float, Grads]:
    """Mean squared TD error on the taken action, targets held constant."""
    if mlp.head != "linear":
        raise UsageError("TD loss requires a linear head")
    x = _check_input(mlp, x)
    if len(x) == 0:
        raise UsageError("empty batch")
    actions = np.asarray(actions, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.float64)
    if not np.isfinite(targets).all():
        raise TrainingError("non-finite TD target")
    acts, z = _forward_full(mlp, x)
    rows = np.arange(len(x))
    residual = z[rows, actions] - targets
    loss = float(np.mean(residual**2))
    dz = np.zeros_like(z)
    dz[rows, actions] = 2.0 * residual / len(x)
    return loss, _backward(mlp, acts, dz)


@dataclass
class AdamState:
    """Adaptive-moment optimizer state for one network."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m_w: list[np.ndarray] = field(default_factory=list)
    v_w: list[np.ndarray] = field(default_factory=list)
    m_b: list[np.ndarray] = field(default_factory=list)
    v_b: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_mlp(cls, mlp: Mlp, lr: float = 1e-3) -> "AdamState":
        return cls(
            lr=lr,
            m_w=[np.zeros_like(w) for w in mlp.weights],
            v_w=[np.zeros_like(w) for w in mlp.weights],
            m_b=[np.zeros_like(b) for b in mlp.biases],
            v_b=[np.zeros_like(b) for b in mlp.biases],
        )


def optimizer_step(mlp: Mlp, grads: Grads, opt: AdamState) -> None:
    """One bias-corrected adaptive-moment update, in place."""
    d_weights, d_biases = grads
    for name, g in zip((f"W{i}" for i in range(len(d_weights))), d_weights):
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient in block {name}")
    for name, g in zip((f"b{i}" for i in range(len(d_biases))), d_biases):
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient in block {name}")
    opt.step_count += 1
    t = opt.step_count
    bias1 = 1.0 - opt.beta1**t
    bias2 = 1.0 - opt.beta2**t
    for params, grads_list, ms, vs in (
        (mlp.weights, d_weights, opt.m_w, opt.v_w),
        (mlp.biases, d_biases, opt.m_b, opt.v_b),
    ):
        for p, g, m, v in zip(params, grads_list, ms, vs):
            m *= opt.beta1
            m += (1.0 - opt.beta1) * g
            v *= opt.beta2
            v += (1.0 - opt.beta2) * g**2
            p -= opt.lr * (m / bias1) / (np.sqrt(v / bias2) + opt.eps)


def finite_diff_check(
    mlp: Mlp,
    loss_fn,
    h: float = 1e-5,
    n_coords: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(mlp) -> (loss, grads)`` must be deterministic. Checks a random
    subset of at least ``n_coords`` parameter coordinates. Coordinates where
    both gradients are below 1e-8 in magnitude count as agreeing, which
    covers flat directions such as clamped probabilities.
    """
    if h <= 0:
        raise UsageError("perturbation h must be positive")
    _, grads = loss_fn(mlp)
    flat_analytic = np.concatenate(
        [g.ravel() for g in grads[0]] + [g.ravel() for g in grads[1]]
    )
    arrays = mlp.weights + mlp.biases
    total = sum(a.size for a in arrays)
    rng = derive_rng(seed, "fd-check")
    n = min(n_coords, total)
    coords = rng.choice(total, size=n, replace=False)
    offsets = np.cumsum([0] + [a.size for a in arrays])
    max_rel = 0.0
    for coord in coords:
        arr_idx = int(np.searchsorted(offsets, coord, side="right") - 1)
        arr = arrays[arr_idx]
        local = int(coord - offsets[arr_idx])
        idx = np.unravel_index(local, arr.shape)
        orig = arr[idx]
        arr[idx] = orig + h
        loss_plus, _ = loss_fn(mlp)
        arr[idx] = orig - h
        loss_minus, _ = loss_fn(mlp)
        arr[idx] = orig
        numeric = (loss_plus - loss_minus) / (2.0 * h)
        analytic = flat_analytic[coord]
        denom = max(abs(numeric), abs(analytic))
        if denom < 1e-8:
            continue
        max_rel = max(max_rel, abs(numeric - analytic) / denom)
    return max_rel


def save_model(path: str | Path, mlp: Mlp, provenance: dict | None = None) -> None:
    """Checkpoint with exact float64 parameters and a provenance record."""
    payload = {
        "sizes": np.array(mlp.sizes, dtype=np.int64),
        "head": np.array(mlp.head),
        "provenance": np.array(json.dumps(provenance or {}, sort_keys=True)),
    }
    for name, arr in mlp.param_arrays():
        payload[name] = arr
    np.savez(path, **payload)


def load_model(path: str | Path) -> tuple[Mlp, dict]:
    with np.load(path, allow_pickle=False) as archive:
        sizes = tuple(int(s) for s in archive["sizes"])
        head = str(archive["head"])
        provenance = json.loads(str(archive["provenance"]))
        weights = [archive[f"W{i}"] for i in range(len(sizes) - 1)]
        biases = [archive[f"b{i}"] for i in range(len(sizes) - 1)]
    return Mlp(sizes=sizes, head=head, weights=weights, biases=biases), provenance
