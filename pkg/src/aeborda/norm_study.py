"""Empirical RKHS norms of sampled rewards versus their Borda functions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve

from .environment import borda_values, make_environment
from .kernels import KernelSpec
from .posterior import stable_cholesky

# Neither value is pinned down by the method description; both were picked
# from a small sweep (see README, "Norm study").
DEFAULT_REGULARIZATION = 1e-6
DEFAULT_LENGTHSCALE = 1.0


def _norms_on(K: np.ndarray, values: list[np.ndarray], regularization: float) -> list[float]:
    """``sqrt(alpha^T K alpha)`` with ``(K + reg I) alpha = f`` for each ``f``."""
    L, _ = stable_cholesky(K + regularization * np.eye(len(K)))
    out = []
    for f in values:
        alpha = cho_solve((L, True), np.asarray(f, dtype=float))
        out.append(math.sqrt(max(float(alpha @ (K @ alpha)), 0.0)))
    return out


def estimate_rkhs_norm(
    f,
    kernel: KernelSpec,
    num_points: int,
    rng: np.random.Generator,
    dim: int,
    regularization: float = DEFAULT_REGULARIZATION,
) -> float:
    """Norm of the regularized kernel interpolant of ``f`` at uniform points.

    ``f`` maps an ``(n, dim)`` array of points in the unit cube to ``n`` values.
    """
    if num_points < 2:
        raise ValueError("num_points must be >= 2")
    Z = rng.random((num_points, dim))
    return norm_at_points(f(Z), kernel, Z, regularization)


def norm_at_points(values, kernel: KernelSpec, Z, regularization: float = DEFAULT_REGULARIZATION) -> float:
    return _norms_on(kernel.gram(Z, Z), [values], regularization)[0]


@dataclass(frozen=True)
class FunctionNorms:
    index: int
    reward_seed: int
    reward_norm: float
    borda_norm: float

    @property
    def win(self) -> bool:
        return self.borda_norm < self.reward_norm


@dataclass(frozen=True)
class NormStudyResult:
    """Summary of one (context_dim, action_dim) cell.

    ``win_margin`` is the mean of ``reward_norm - borda_norm``; ties count as
    losses.
    """

    context_dim: int
    action_dim: int
    num_functions: int
    win_rate: float
    win_margin: float
    ties: int = 0
    functions: tuple[FunctionNorms, ...] = field(default=(), repr=False, compare=False)

    @property
    def loss_rate(self) -> float:
        return 1.0 - self.win_rate

    def summary_record(self) -> dict:
        return {
            "context_dim": self.context_dim,
            "action_dim": self.action_dim,
            "num_functions": self.num_functions,
            "win_rate": self.win_rate,
            "win_margin": self.win_margin,
            "ties": self.ties,
        }


def summarize(context_dim: int, action_dim: int, functions) -> NormStudyResult:
    functions = tuple(functions)
    if not functions:
        raise ValueError("need at least one function")
    n = len(functions)
    wins = sum(f.win for f in functions)
    ties = sum(f.borda_norm == f.reward_norm for f in functions)
    margin = math.fsum(f.reward_norm - f.borda_norm for f in functions) / n
    return NormStudyResult(context_dim, action_dim, n, wins / n, margin, ties, functions)


def run_norm_study(
    context_dim: int,
    action_dim: int,
    num_functions: int,
    seed: int = 0,
    *,
    num_points: int = 1000,
    quadrature_points: int = 1024,
    lengthscale: float = DEFAULT_LENGTHSCALE,
    num_features: int = 128,
    target_std: float = 1.0,
    regularization: float = DEFAULT_REGULARIZATION,
) -> NormStudyResult:
    """Compare ``||r||`` and ``||f_r||`` over ``num_functions`` sampled rewards.

    Both norms use the squared-exponential kernel with the generator's
    lengthscale and share the same uniform sample points per function.
    """
    if num_functions < 1:
        raise ValueError("num_functions must be >= 1")
    if action_dim < 1 or context_dim < 0:
        raise ValueError("need action_dim >= 1 and context_dim >= 0")
    kernel = KernelSpec("squared-exponential", lengthscale, 1.0)
    dim = context_dim + action_dim
    children = np.random.SeedSequence([seed, context_dim, action_dim]).spawn(num_functions)
    functions = []
    for i, child in enumerate(children):
        reward_seed = int(child.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
        env = make_environment(context_dim, action_dim, seed=reward_seed,
                               num_features=num_features, lengthscale=lengthscale,
                               target_std=target_std)
        Z = np.random.default_rng(child).random((num_points, dim))
        r_norm, b_norm = _norms_on(
            kernel.gram(Z, Z),
            [env.reward(Z), borda_values(env, Z, quadrature_points)],
            regularization,
        )
        functions.append(FunctionNorms(i, reward_seed, r_norm, b_norm))
    return summarize(context_dim, action_dim, functions)
