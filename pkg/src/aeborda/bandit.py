"""Active exploration over the contextual Borda function on finite grids.

Three strategies share one posterior and one action rule:

* ``ae-borda`` picks the context whose optimistic and pessimistic values
  differ most, then the optimistic action;
* ``ucb-borda`` draws the context uniformly, then the optimistic action;
* ``uniform-borda`` draws both uniformly.

The comparator is always uniform over the action grid. Ties resolve to the
lowest grid index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .environment import Environment, duel, joint_grid
from .errors import StateError
from .kernels import KernelSpec
from .posterior import (
    GridPosterior,
    PosteriorModel,
    PreferenceObservation,
    fit,
    info_gain_curve,
    predict,
    update,
)

STRATEGIES = ("ae-borda", "ucb-borda", "uniform-borda")
BETA_MODES = ("theoretical", "fixed")


@dataclass(frozen=True)
class BetaSchedule:
    """Confidence-width schedule.

    In theoretical mode the width after ``n`` observations is
    ``2 B + sqrt(2 Phi_n + 1 + log(2 / delta))`` with ``Phi_n`` the greedy
    information-gain estimate.
    """

    mode: str = "fixed"
    B: float = 1.0
    delta: float = 0.05
    fixed_value: float = 2.0

    def __post_init__(self):
        if self.mode not in BETA_MODES:
            raise ValueError(f"unknown beta mode {self.mode!r}")
        if not self.B > 0 or not 0 < self.delta < 1:
            raise ValueError("need B > 0 and 0 < delta < 1")
        if self.fixed_value < 0:
            raise ValueError("fixed_value must be non-negative")

    def value(self, info_gain: float) -> float:
        if self.mode == "fixed":
            return float(self.fixed_value)
        return float(2.0 * self.B + np.sqrt(2.0 * info_gain + 1.0 + np.log(2.0 / self.delta)))


@dataclass(frozen=True)
class ArchiveEntry:
    num_observations: int
    beta: float
    snapshot: PosteriorModel | None = None


@dataclass(frozen=True)
class GridPolicy:
    """Action choice per context-grid row; off-grid contexts use the nearest row."""

    context_grid: np.ndarray
    action_grid: np.ndarray
    action_index: np.ndarray

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        if self.context_grid.shape[1] == 0:
            row = 0
        else:
            row = int(np.argmin(((self.context_grid - x) ** 2).sum(axis=1)))
        return self.action_grid[self.action_index[row]]


def _same(a: np.ndarray, b) -> bool:
    b = np.asarray(b, dtype=float)
    return a.shape == b.shape and np.array_equal(a, b)


class StrategyState:
    """Posterior, beta schedule and lower-bound archive of one strategy run.

    ``step`` advances the state in place. The archive gets one entry per
    posterior (the initial one plus one per step); every
    ``snapshot_every``-th entry and the latest keep a posterior handle for
    off-grid policy extraction. On the state's own grids the running maximum
    of lower bounds is exact over all entries.
    """

    def __init__(
        self,
        strategy: str,
        posterior: PosteriorModel,
        beta: BetaSchedule,
        context_grid,
        action_grid,
        snapshot_every: int = 10,
        info_gain_probes: int = 256,
    ):
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}")
        if snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")
        self.strategy = strategy
        self.posterior = posterior
        self.beta = beta
        self.context_grid = np.asarray(context_grid, dtype=float)
        self.action_grid = np.asarray(action_grid, dtype=float)
        if len(self.context_grid) == 0 or len(self.action_grid) == 0:
            raise ValueError("grids must be non-empty")
        self.snapshot_every = snapshot_every
        self.info_gain_probes = info_gain_probes
        self.grid = GridPosterior(posterior, joint_grid(self.context_grid, self.action_grid),
                                  capacity=posterior.num_observations + 64)
        self.archive: list[ArchiveEntry] = []
        self.archived_lcb: np.ndarray | None = None
        self.last_acquisition = float("nan")
        self.query_variances: list[float] = []
        self._archive_current()

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.context_grid), len(self.action_grid)

    def beta_for(self, num_observations: int) -> float:
        if self.beta.mode == "fixed":
            return self.beta.value(0.0)
        if num_observations == 0:
            phi = 0.0
        else:
            phi = float(info_gain_curve(self.posterior.kernel, self.posterior.noise_scale,
                                        self.posterior.dim, num_observations,
                                        self.info_gain_probes)[-1])
        return self.beta.value(phi)

    @property
    def current_beta(self) -> float:
        return self.beta_for(self.posterior.num_observations)

    def grid_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Upper and lower bounds on the state grid, shape ``(nc, na)``."""
        beta = self.current_beta
        mean = self.grid.mean.reshape(self.shape)
        width = beta * self.grid.std.reshape(self.shape)
        return mean + width, mean - width

    def bounds_on(self, context_grid, action_grid, model: PosteriorModel | None = None,
                  beta: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Bounds on arbitrary grids; reuses the cache for the state's own grids."""
        if model is None and _same(self.context_grid, context_grid) and _same(self.action_grid, action_grid):
            return self.grid_bounds()
        model = model or self.posterior
        if beta is None:
            beta = self.beta_for(model.num_observations)
        cg = np.asarray(context_grid, dtype=float)
        ag = np.asarray(action_grid, dtype=float)
        mean, std = model.predict_many(joint_grid(cg, ag))
        mean = mean.reshape(len(cg), len(ag))
        std = std.reshape(len(cg), len(ag))
        return mean + beta * std, mean - beta * std

    def _archive_current(self):
        beta = self.current_beta
        n = len(self.archive)
        if self.archive and self.archive[-1].snapshot is not None and (n - 1) % self.snapshot_every:
            last = self.archive[-1]
            self.archive[-1] = ArchiveEntry(last.num_observations, last.beta)
        self.archive.append(ArchiveEntry(self.posterior.num_observations, beta, self.posterior))
        lcb = (self.grid.mean - beta * self.grid.std).reshape(self.shape)
        if self.archived_lcb is None:
            self.archived_lcb = lcb.copy()
        else:
            np.maximum(self.archived_lcb, lcb, out=self.archived_lcb)

    def absorb(self, obs: PreferenceObservation):
        """Add one observation to the posterior, the grid cache and the archive.

        The posterior variance at the query point, taken before the update,
        is appended to ``query_variances``.
        """
        self.query_variances.append(predict(self.posterior, obs.joint)[1] ** 2)
        self.posterior = update(self.posterior, obs)
        self.grid.add(self.posterior)
        self._archive_current()


def new_state(
    strategy: str,
    kernel: KernelSpec,
    data: list[PreferenceObservation],
    context_grid,
    action_grid,
    beta: BetaSchedule | None = None,
    regularization: float = 0.1,
    noise_scale: float = 0.5,
    snapshot_every: int = 10,
    info_gain_probes: int = 256,
) -> StrategyState:
    cg = np.asarray(context_grid, dtype=float)
    ag = np.asarray(action_grid, dtype=float)
    posterior = fit(kernel, regularization, data, dim=cg.shape[1] + ag.shape[1],
                    noise_scale=noise_scale)
    return StrategyState(strategy, posterior, beta or BetaSchedule(), cg, ag,
                         snapshot_every, info_gain_probes)


def context_acquisition(state: StrategyState, context_grid, action_grid) -> np.ndarray:
    """Per-context gap between the optimistic and pessimistic value."""
    ucb, lcb = state.bounds_on(context_grid, action_grid)
    return ucb.max(axis=1) - lcb.max(axis=1)


def select_context(state: StrategyState, context_grid, action_grid,
                   rng: np.random.Generator | None = None) -> np.ndarray:
    cg = np.asarray(context_grid, dtype=float)
    if len(cg) == 0 or len(action_grid) == 0:
        raise ValueError("grids must be non-empty")
    acq = context_acquisition(state, cg, action_grid)
    if state.strategy == "ae-borda":
        i = int(np.argmax(acq))
    else:
        if rng is None:
            raise ValueError(f"{state.strategy} needs an rng to draw contexts")
        i = int(rng.integers(len(cg)))
    state.last_acquisition = float(acq[i])
    return cg[i]


def _ucb_at(state: StrategyState, x, action_grid) -> np.ndarray:
    ag = np.asarray(action_grid, dtype=float)
    x = np.asarray(x, dtype=float).ravel()
    if _same(state.action_grid, ag):
        rows = np.flatnonzero((state.context_grid == x).all(axis=1))
        if len(rows):
            ucb, _ = state.grid_bounds()
            return ucb[rows[0]]
    ucb, _ = state.bounds_on(x[None, :], ag)
    return ucb[0]


def select_action(state: StrategyState, x, action_grid,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Optimistic (or uniform) action and a uniform comparator."""
    ag = np.asarray(action_grid, dtype=float)
    if len(ag) == 0:
        raise ValueError("action grid must be non-empty")
    if state.strategy == "uniform-borda":
        a = ag[int(rng.integers(len(ag)))]
    else:
        a = ag[int(np.argmax(_ucb_at(state, x, ag)))]
    a_prime = ag[int(rng.integers(len(ag)))]
    return a, a_prime


def step(state: StrategyState, env: Environment,
         rng: np.random.Generator) -> tuple[StrategyState, PreferenceObservation]:
    """One round on the state's grids: choose, duel, update, archive."""
    x = select_context(state, state.context_grid, state.action_grid, rng)
    a, a_prime = select_action(state, x, state.action_grid, rng)
    w = duel(env, x, a, a_prime, rng)
    obs = PreferenceObservation(x, a, a_prime, w)
    state.absorb(obs)
    return state, obs


def extract_policy(state: StrategyState, context_grid=None, action_grid=None) -> GridPolicy:
    """Pessimistic policy: per context, the action with the best archived lower bound."""
    if not state.archive:
        raise StateError("no archived posterior to extract a policy from")
    cg = state.context_grid if context_grid is None else np.asarray(context_grid, dtype=float)
    ag = state.action_grid if action_grid is None else np.asarray(action_grid, dtype=float)
    if _same(state.context_grid, cg) and _same(state.action_grid, ag):
        best = state.archived_lcb
    else:
        best = None
        for entry in state.archive:
            if entry.snapshot is None:
                continue
            _, lcb = state.bounds_on(cg, ag, model=entry.snapshot, beta=entry.beta)
            best = lcb if best is None else np.maximum(best, lcb)
    return GridPolicy(cg, ag, np.argmax(best, axis=1))


def warmup(env: Environment, n0: int, rng: np.random.Generator) -> list[PreferenceObservation]:
    """``n0`` duels with context, action and comparator uniform on the unit cube."""
    if n0 < 0:
        raise ValueError("n0 must be non-negative")
    data = []
    for _ in range(n0):
        x = rng.random(env.context_dim)
        a = rng.random(env.action_dim)
        a_prime = rng.random(env.action_dim)
        data.append(PreferenceObservation(x, a, a_prime, duel(env, x, a, a_prime, rng)))
    return data
