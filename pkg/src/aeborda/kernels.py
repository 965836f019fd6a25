"""Kernels on joint context-action inputs and random Fourier feature rewards."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import qmc

KERNEL_FAMILIES = ("squared-exponential", "matern-5/2", "matern-3/2", "linear")

_SQRT3 = np.sqrt(3.0)
_SQRT5 = np.sqrt(5.0)


@dataclass(frozen=True)
class KernelSpec:
    """Covariance function on the joint space ``[0, 1]^(dx + da)``.

    Parameters
    ----------
    family : str
        One of ``KERNEL_FAMILIES``.
    lengthscale : float
        Input-space lengthscale. For the linear kernel it rescales the inputs.
    variance : float
        Signal variance; ``k(z, z)`` for the stationary families.
    """

    family: str = "matern-5/2"
    lengthscale: float = 0.3
    variance: float = 1.0

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not self.lengthscale > 0:
            raise ValueError("lengthscale must be positive")
        if not self.variance > 0:
            raise ValueError("variance must be positive")

    @property
    def stationary(self) -> bool:
        return self.family != "linear"

    def gram(self, Z1, Z2) -> np.ndarray:
        """Kernel matrix between the rows of ``Z1`` and ``Z2``."""
        Z1 = _as_points(Z1)
        Z2 = _as_points(Z2)
        if Z1.shape[1] != Z2.shape[1]:
            raise ValueError(
                f"dimension mismatch: {Z1.shape[1]} vs {Z2.shape[1]}"
            )
        if self.family == "linear":
            return self.variance * (Z1 @ Z2.T) / self.lengthscale**2
        if self.family == "squared-exponential":
            sq = cdist(Z1, Z2, "sqeuclidean")
            return self.variance * np.exp(-0.5 * sq / self.lengthscale**2)
        r = cdist(Z1, Z2, "euclidean") / self.lengthscale
        if self.family == "matern-5/2":
            s = _SQRT5 * r
            return self.variance * (1.0 + s + s * s / 3.0) * np.exp(-s)
        s = _SQRT3 * r
        return self.variance * (1.0 + s) * np.exp(-s)

    def diag(self, Z) -> np.ndarray:
        """``k(z, z)`` for every row of ``Z``."""
        Z = _as_points(Z)
        if self.family == "linear":
            return self.variance * np.einsum("ij,ij->i", Z, Z) / self.lengthscale**2
        return np.full(Z.shape[0], self.variance)


def _as_points(Z) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[None, :]
    if Z.ndim != 2:
        raise ValueError(f"expected a point or a 2-D array of points, got shape {Z.shape}")
    return Z


def eval_kernel(spec: KernelSpec, z1, z2) -> float:
    """Evaluate the kernel at a single pair of joint points."""
    z1 = np.asarray(z1, dtype=float).ravel()
    z2 = np.asarray(z2, dtype=float).ravel()
    if z1.shape != z2.shape:
        raise ValueError(f"dimension mismatch: {z1.shape[0]} vs {z2.shape[0]}")
    return float(spec.gram(z1, z2)[0, 0])


@lru_cache(maxsize=64)
def _sobol(dim: int, n: int) -> np.ndarray:
    with warnings.catch_warnings():
        # balance-property warning for non powers of two
        warnings.simplefilter("ignore", UserWarning)
        pts = qmc.Sobol(dim, scramble=True, seed=0).random(n)
    pts.setflags(write=False)
    return pts


def sobol_points(dim: int, n: int) -> np.ndarray:
    """Deterministic low-discrepancy points in ``[0, 1]^dim`` (read-only)."""
    if dim < 1 or n < 1:
        raise ValueError("dim and n must be positive")
    return _sobol(int(dim), int(n))


@dataclass(frozen=True, eq=False)
class RffBasis:
    """Reward ``r(z) = sum_j weights_j * cos(frequencies_j . z + phases_j)``."""

    frequencies: np.ndarray
    phases: np.ndarray
    weights: np.ndarray
    context_dim: int
    action_dim: int

    def __post_init__(self):
        n = self.frequencies.shape[0]
        if self.phases.shape != (n,) or self.weights.shape != (n,):
            raise ValueError("frequencies, phases and weights disagree in length")
        if self.frequencies.shape[1] != self.input_dim:
            raise ValueError("frequency width must equal context_dim + action_dim")

    @property
    def input_dim(self) -> int:
        return self.context_dim + self.action_dim

    @property
    def num_features(self) -> int:
        return self.frequencies.shape[0]

    def __call__(self, Z) -> np.ndarray:
        Z = _as_points(Z)
        if Z.shape[1] != self.input_dim:
            raise ValueError(
                f"expected joint points of dimension {self.input_dim}, got {Z.shape[1]}"
            )
        return np.cos(Z @ self.frequencies.T + self.phases) @ self.weights

    def __eq__(self, other):
        if not isinstance(other, RffBasis):
            return NotImplemented
        return (
            self.context_dim == other.context_dim
            and self.action_dim == other.action_dim
            and np.array_equal(self.frequencies, other.frequencies)
            and np.array_equal(self.phases, other.phases)
            and np.array_equal(self.weights, other.weights)
        )

    def to_record(self) -> dict:
        return {
            "context_dim": self.context_dim,
            "action_dim": self.action_dim,
            "frequencies": self.frequencies.tolist(),
            "phases": self.phases.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_record(cls, record: dict) -> "RffBasis":
        dim = record["context_dim"] + record["action_dim"]
        return cls(
            frequencies=np.asarray(record["frequencies"], dtype=float).reshape(-1, dim),
            phases=np.asarray(record["phases"], dtype=float),
            weights=np.asarray(record["weights"], dtype=float),
            context_dim=record["context_dim"],
            action_dim=record["action_dim"],
        )


def sample_reward(
    dim_context: int,
    dim_action: int,
    num_features: int = 128,
    seed: int = 0,
    lengthscale: float = 0.3,
    target_std: float = 1.0,
    probe_points: int = 1024,
) -> RffBasis:
    """Draw a random reward from the RFF prior of a squared-exponential kernel.

    Weights are rescaled so that ``r`` has empirical standard deviation
    ``target_std`` over a fixed low-discrepancy probe set of ``probe_points``.
    """
    if dim_context < 0 or dim_action < 0 or dim_context + dim_action < 1:
        raise ValueError("need dim_context >= 0, dim_action >= 0 and a non-empty input")
    if num_features < 1:
        raise ValueError("num_features must be >= 1")
    if not lengthscale > 0:
        raise ValueError("lengthscale must be positive")
    dim = dim_context + dim_action
    rng = np.random.default_rng(seed)
    freqs = rng.standard_normal((num_features, dim)) / lengthscale
    phases = rng.uniform(0.0, 2.0 * np.pi, num_features)
    weights = rng.standard_normal(num_features)
    basis = RffBasis(freqs, phases, weights, dim_context, dim_action)
    if target_std is not None:
        std = basis(sobol_points(dim, probe_points)).std()
        if std > 0:
            basis = RffBasis(freqs, phases, weights * (target_std / std), dim_context, dim_action)
    return basis


def eval_reward(basis: RffBasis, x, a) -> float:
    """Reward at context ``x`` and action ``a`` (``x`` may be empty)."""
    x = np.asarray(x, dtype=float).ravel()
    a = np.asarray(a, dtype=float).ravel()
    if x.shape[0] != basis.context_dim or a.shape[0] != basis.action_dim:
        raise ValueError(
            f"expected dims ({basis.context_dim}, {basis.action_dim}), "
            f"got ({x.shape[0]}, {a.shape[0]})"
        )
    return float(basis(np.concatenate([x, a]))[0])
