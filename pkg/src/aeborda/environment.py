"""Ground-truth preference environment: links, duels, Borda oracle, regret."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, ndtr

from .kernels import RffBasis, sample_reward, sobol_points

LINK_FAMILIES = ("logistic", "gaussian-cdf")


@dataclass(frozen=True)
class LinkFunction:
    """Monotone map from reward gaps to win probabilities."""

    family: str = "logistic"
    scale: float = 1.0

    def __post_init__(self):
        if self.family not in LINK_FAMILIES:
            raise ValueError(f"unknown link family {self.family!r}")
        if not self.scale > 0:
            raise ValueError("link scale must be positive")

    def __call__(self, u):
        u = np.asarray(u, dtype=float) / self.scale
        if self.family == "logistic":
            return expit(u)
        return ndtr(u)


@dataclass(frozen=True)
class Environment:
    reward: RffBasis
    link: LinkFunction = field(default_factory=LinkFunction)
    seed: int = 0

    @property
    def context_dim(self) -> int:
        return self.reward.context_dim

    @property
    def action_dim(self) -> int:
        return self.reward.action_dim

    def joint(self, x, a) -> np.ndarray:
        """Stack contexts and actions into joint points (broadcasting rows)."""
        x = np.asarray(x, dtype=float)
        x = np.zeros((1, 0)) if x.size == 0 else x.reshape(-1, self.context_dim)
        a = np.asarray(a, dtype=float).reshape(-1, self.action_dim)
        n = max(len(x), len(a))
        x = np.broadcast_to(x, (n, self.context_dim))
        a = np.broadcast_to(a, (n, self.action_dim))
        return np.hstack([x, a])

    def preference(self, x, a, a_prime) -> np.ndarray:
        """``rho(r(x, a) - r(x, a'))`` for rows of contexts and action pairs."""
        gap = self.reward(self.joint(x, a)) - self.reward(self.joint(x, a_prime))
        return self.link(gap)


def make_environment(
    context_dim: int = 1,
    action_dim: int = 1,
    seed: int = 0,
    num_features: int = 128,
    lengthscale: float = 0.3,
    target_std: float = 1.0,
    link: LinkFunction | None = None,
) -> Environment:
    reward = sample_reward(
        context_dim, action_dim, num_features, seed, lengthscale, target_std
    )
    return Environment(reward, link or LinkFunction(), seed)


def make_grid(dim: int, points_per_dim: int) -> np.ndarray:
    """Regular grid on ``[0, 1]^dim``; ``dim == 0`` gives one empty point."""
    if dim == 0:
        return np.zeros((1, 0))
    if points_per_dim < 1:
        raise ValueError("points_per_dim must be >= 1")
    axis = np.linspace(0.0, 1.0, points_per_dim)
    return np.array(list(itertools.product(axis, repeat=dim)), dtype=float)


def joint_grid(context_grid, action_grid) -> np.ndarray:
    """All (context, action) pairs, context-major: row ``i * na + j``."""
    cg = np.asarray(context_grid, dtype=float)
    ag = np.asarray(action_grid, dtype=float)
    nc, na = len(cg), len(ag)
    return np.hstack([np.repeat(cg, na, axis=0), np.tile(ag, (nc, 1))])


def duel(env: Environment, x, a, a_prime, rng: np.random.Generator) -> int:
    """One Bernoulli preference draw: 1 if ``a`` beats ``a_prime`` at ``x``."""
    p = float(env.preference(x, a, a_prime)[0])
    return int(rng.random() < p)


def _reward_against_nodes(reward: RffBasis, X: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """``r(x_i, a'_k)`` for every context row and quadrature node.

    Uses cos(u + v) = cos u cos v - sin u sin v so the cost is two matrix
    products instead of a cosine per (i, k, feature).
    """
    dx = reward.context_dim
    u = X @ reward.frequencies[:, :dx].T + reward.phases
    v = nodes @ reward.frequencies[:, dx:].T
    w = reward.weights
    return (np.cos(u) * w) @ np.cos(v).T - (np.sin(u) * w) @ np.sin(v).T


def borda_values(
    env: Environment, Z, quadrature_points: int = 1024, nodes=None, chunk: int = 2048
) -> np.ndarray:
    """Contextual Borda function ``E_{a' ~ U(A)} rho(r(x, a) - r(x, a'))``.

    ``Z`` holds joint points; the expectation is a quasi-Monte-Carlo average
    over ``quadrature_points`` Sobol nodes unless ``nodes`` is supplied.
    """
    if quadrature_points < 2:
        raise ValueError("quadrature_points must be >= 2")
    Z = np.asarray(Z, dtype=float).reshape(-1, env.context_dim + env.action_dim)
    if nodes is None:
        nodes = sobol_points(env.action_dim, quadrature_points)
    nodes = np.asarray(nodes, dtype=float).reshape(-1, env.action_dim)
    out = np.empty(len(Z))
    for start in range(0, len(Z), chunk):
        block = Z[start:start + chunk]
        r_here = env.reward(block)
        r_nodes = _reward_against_nodes(env.reward, block[:, :env.context_dim], nodes)
        out[start:start + chunk] = env.link(r_here[:, None] - r_nodes).mean(axis=1)
    return out


def borda_oracle(env: Environment, x, a, quadrature_points: int = 1024) -> float:
    return float(borda_values(env, env.joint(x, a), quadrature_points)[0])


def reward_on_grid(env: Environment, context_grid, action_grid) -> np.ndarray:
    """Reward matrix of shape ``(len(context_grid), len(action_grid))``."""
    nc, na = len(context_grid), len(action_grid)
    return env.reward(joint_grid(context_grid, action_grid)).reshape(nc, na)


def suboptimality(env: Environment, policy, context_grid, action_grid) -> tuple[float, float]:
    """Worst-case and median per-context regret of ``policy`` on the grids.

    ``policy`` maps a context vector to an action vector. The per-context
    optimum is the best action on ``action_grid``.
    """
    context_grid = np.asarray(context_grid, dtype=float)
    action_grid = np.asarray(action_grid, dtype=float)
    if len(context_grid) == 0 or len(action_grid) == 0:
        raise ValueError("grids must be non-empty")
    R = reward_on_grid(env, context_grid, action_grid)
    best = R.max(axis=1)
    chosen = np.array([np.asarray(policy(x), dtype=float).ravel() for x in context_grid])
    index = {tuple(a): j for j, a in enumerate(action_grid)}
    cols = [index.get(tuple(a)) for a in chosen]
    if all(j is not None for j in cols):
        # on-grid choices reuse the reward matrix so exact optima give exactly 0
        achieved = R[np.arange(len(context_grid)), cols]
    else:
        achieved = env.reward(env.joint(context_grid, chosen))
    gaps = np.maximum(best - achieved, 0.0)
    return float(gaps.max()), float(np.median(gaps))
