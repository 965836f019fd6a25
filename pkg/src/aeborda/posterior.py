"""Kernel ridge regression of binary preference outcomes.

The regression input is the joint point ``(x, a)``; the comparator action is
never a regressor because the target is the Borda function, which averages
over it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NumericalError
from .kernels import KernelSpec, sobol_points

JITTER_LADDER = (1e-8, 1e-6, 1e-4)


def stable_cholesky(A: np.ndarray, ladder=JITTER_LADDER) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``A``, escalating diagonal jitter on failure.

    Returns the factor and the jitter that was added (0.0 if none).
    """
    A = np.asarray(A, dtype=float)
    eye = np.eye(len(A))
    for jitter in (0.0, *ladder):
        try:
            return np.linalg.cholesky(A + jitter * eye if jitter else A), jitter
        except np.linalg.LinAlgError:
            continue
    eigs = np.linalg.eigvalsh(0.5 * (A + A.T)) if len(A) else np.zeros(1)
    raise NumericalError(
        f"Cholesky failed after jitter {ladder[-1]:g}: size={len(A)}, "
        f"min eigenvalue={eigs[0]:.3e}, max eigenvalue={eigs[-1]:.3e}"
    )


@dataclass(frozen=True)
class PreferenceObservation:
    """One duel: ``outcome`` is 1 when ``action`` beat ``comparator``."""

    context: tuple[float, ...]
    action: tuple[float, ...]
    comparator: tuple[float, ...]
    outcome: int

    def __post_init__(self):
        if self.outcome not in (0, 1):
            raise ValueError(f"outcome must be 0 or 1, got {self.outcome!r}")
        object.__setattr__(self, "context", tuple(float(v) for v in np.ravel(self.context)))
        object.__setattr__(self, "action", tuple(float(v) for v in np.ravel(self.action)))
        object.__setattr__(self, "comparator", tuple(float(v) for v in np.ravel(self.comparator)))

    @property
    def joint(self) -> np.ndarray:
        return np.array(self.context + self.action, dtype=float)


@dataclass(frozen=True, eq=False)
class PosteriorModel:
    """KRR state. ``factor @ factor.T == K + regularization * I``.

    ``coef`` caches ``factor^{-1} targets`` so the mean at ``z`` is
    ``(factor^{-1} k(z)) . coef``.
    """

    kernel: KernelSpec
    dim: int
    regularization: float
    noise_scale: float
    points: np.ndarray
    targets: np.ndarray
    factor: np.ndarray
    coef: np.ndarray
    jitter: float = 0.0

    @property
    def num_observations(self) -> int:
        return len(self.targets)

    def predict_many(self, Z) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and standard deviation at the rows of ``Z``."""
        Z = np.asarray(Z, dtype=float).reshape(-1, self.dim)
        prior = self.kernel.diag(Z)
        if self.num_observations == 0:
            return np.zeros(len(Z)), np.sqrt(prior)
        V = solve_triangular(self.factor, self.kernel.gram(self.points, Z), lower=True)
        mean = V.T @ self.coef
        var = np.clip(prior - np.einsum("ij,ij->j", V, V), 0.0, None)
        return mean, np.sqrt(var)


def _check_dim(Z: np.ndarray, dim: int):
    if Z.shape[-1] != dim:
        raise ValueError(f"expected joint points of dimension {dim}, got {Z.shape[-1]}")


def fit_points(
    kernel: KernelSpec,
    regularization: float,
    Z,
    w,
    *,
    dim: int | None = None,
    noise_scale: float = 0.5,
) -> PosteriorModel:
    if not regularization > 0:
        raise ValueError("regularization must be positive")
    Z = np.asarray(Z, dtype=float)
    if dim is None:
        if Z.ndim != 2:
            raise ValueError("dim is required when there is no data")
        dim = Z.shape[1]
    Z = Z.reshape(-1, dim)
    w = np.asarray(w, dtype=float).ravel()
    if len(w) != len(Z):
        raise ValueError("points and targets differ in length")
    if len(Z) == 0:
        empty = np.zeros((0, 0))
        return PosteriorModel(kernel, dim, regularization, noise_scale,
                              Z, w, empty, np.zeros(0))
    A = kernel.gram(Z, Z) + regularization * np.eye(len(Z))
    L, jitter = stable_cholesky(A)
    coef = solve_triangular(L, w, lower=True)
    return PosteriorModel(kernel, dim, regularization, noise_scale, Z, w, L, coef, jitter)


def fit(
    kernel: KernelSpec,
    regularization: float,
    data: list[PreferenceObservation],
    *,
    dim: int | None = None,
    noise_scale: float = 0.5,
) -> PosteriorModel:
    """Batch KRR fit on ``(x_i, a_i) -> w_i``."""
    if data:
        Z = np.array([obs.joint for obs in data])
        w = np.array([obs.outcome for obs in data], dtype=float)
    else:
        Z, w = np.zeros((0, dim or 0)), np.zeros(0)
    return fit_points(kernel, regularization, Z, w, dim=dim, noise_scale=noise_scale)


def update_point(model: PosteriorModel, z, w: float) -> PosteriorModel:
    """Return a new model with ``(z, w)`` appended via a rank-one factor extension."""
    z = np.asarray(z, dtype=float).reshape(1, -1)
    _check_dim(z, model.dim)
    n = model.num_observations
    kz = model.kernel.gram(model.points, z)[:, 0] if n else np.zeros(0)
    row = solve_triangular(model.factor, kz, lower=True) if n else np.zeros(0)
    d2 = model.kernel.diag(z)[0] + model.regularization + model.jitter - row @ row
    points = np.vstack([model.points, z])
    targets = np.append(model.targets, float(w))
    if not d2 > 0:
        # lost positive-definiteness incrementally; fall back to a full refit
        return fit_points(model.kernel, model.regularization, points, targets,
                          dim=model.dim, noise_scale=model.noise_scale)
    d = np.sqrt(d2)
    L = np.zeros((n + 1, n + 1))
    L[:n, :n] = model.factor
    L[n, :n] = row
    L[n, n] = d
    coef = np.append(model.coef, (float(w) - row @ model.coef) / d)
    return PosteriorModel(model.kernel, model.dim, model.regularization,
                          model.noise_scale, points, targets, L, coef, model.jitter)


def update(model: PosteriorModel, obs: PreferenceObservation) -> PosteriorModel:
    return update_point(model, obs.joint, obs.outcome)


def predict(model: PosteriorModel, z) -> tuple[float, float]:
    z = np.asarray(z, dtype=float).ravel()
    _check_dim(z, model.dim)
    mean, std = model.predict_many(z[None, :])
    return float(mean[0]), float(std[0])


class GridPosterior:
    """Posterior mean/variance on a fixed point set, kept current in O(n m) per point.

    Mirrors a sequence of ``update_point`` calls without refactorizing; stores
    ``V = L^{-1} K(points, grid)`` row by row.
    """

    def __init__(self, model: PosteriorModel, grid, capacity: int = 64):
        self.kernel = model.kernel
        self.regularization = model.regularization
        self.jitter = model.jitter
        self.grid = np.asarray(grid, dtype=float).reshape(-1, model.dim)
        self.prior = self.kernel.diag(self.grid)
        n = model.num_observations
        self._V = np.empty((max(capacity, n + 1), len(self.grid)))
        self._n = n
        self.mean = np.zeros(len(self.grid))
        self.var = self.prior.copy()
        if n:
            V = solve_triangular(model.factor, self.kernel.gram(model.points, self.grid), lower=True)
            self._V[:n] = V
            self.mean = V.T @ model.coef
            self.var = np.clip(self.prior - np.einsum("ij,ij->j", V, V), 0.0, None)

    def add(self, model: PosteriorModel):
        """Absorb the last point of ``model`` (which must extend the tracked one by one)."""
        n = model.num_observations
        if n != self._n + 1:
            raise ValueError("model must extend the tracked posterior by exactly one point")
        if n > len(self._V):
            grown = np.empty((2 * len(self._V), len(self.grid)))
            grown[: self._n] = self._V[: self._n]
            self._V = grown
        z = model.points[-1:]
        row = model.factor[-1, :-1]
        d = model.factor[-1, -1]
        v = (self.kernel.gram(z, self.grid)[0] - row @ self._V[: self._n]) / d
        self._V[self._n] = v
        self._n = n
        self.mean = self.mean + v * model.coef[-1]
        self.var = np.clip(self.var - v * v, 0.0, None)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.var)


def greedy_info_gain(kernel: KernelSpec, noise_scale: float, probe, t_max: int) -> np.ndarray:
    """Greedy information-gain curve: entry ``t - 1`` is the estimate after ``t`` picks.

    Each pick takes the probe of largest posterior variance (noise variance
    ``noise_scale**2``) and adds ``0.5 * log(1 + var / noise_scale**2)``.
    Probes may be picked repeatedly.
    """
    probe = np.asarray(probe, dtype=float)
    eta2 = noise_scale**2
    K = kernel.gram(probe, probe)
    var = np.diag(K).copy()
    V = np.zeros((t_max, len(probe)))
    gains = np.empty(t_max)
    total = 0.0
    for t in range(t_max):
        i = int(np.argmax(var))
        vi = max(var[i], 0.0)
        total += 0.5 * np.log1p(vi / eta2)
        gains[t] = total
        cov = K[i] - V[:t, i] @ V[:t]
        V[t] = cov / np.sqrt(vi + eta2)
        var = np.clip(var - V[t] ** 2, 0.0, None)
    return gains


_CURVES: dict = {}


def info_gain_curve(kernel: KernelSpec, noise_scale: float, dim: int,
                    t_max: int, num_probes: int = 256) -> np.ndarray:
    """Greedy curve over the default quasi-random probe set, cached per setting.

    Greedy curves are prefix-consistent, so one cached curve serves every
    ``t <= t_max``.
    """
    key = (kernel, float(noise_scale), int(dim), int(num_probes))
    curve = _CURVES.get(key)
    if curve is None or len(curve) < t_max:
        length = max(int(t_max), 2 * len(curve) if curve is not None else 0)
        curve = greedy_info_gain(kernel, noise_scale, sobol_points(dim, num_probes), length)
        curve.setflags(write=False)
        _CURVES[key] = curve
    return curve[:t_max]


def estimate_info_gain(model: PosteriorModel, t: int, probe=None, num_probes: int = 256) -> float:
    """Greedy surrogate for the maximum information gain after ``t`` rounds."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return 0.0
    if probe is None:
        return float(info_gain_curve(model.kernel, model.noise_scale, model.dim, t, num_probes)[-1])
    return float(greedy_info_gain(model.kernel, model.noise_scale, probe, t)[-1])
