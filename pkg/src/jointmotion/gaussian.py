"""Joint Gaussian numerics: regularization, Cholesky factorization,
scene-level negative log-likelihood, sampling, and marginalization.

The joint distribution over one time step is a 2N-dimensional Gaussian
whose coordinate layout interleaves agents as [x1, y1, x2, y2, ...].
All heavy math runs in 64-bit floats; the log-likelihood goes through a
Cholesky factor (triangular solves), never an explicit inverse.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.linalg.lapack import dpotrf

LOG_TWO_PI = float(np.log(2.0 * np.pi))

# Construction-time symmetry tolerance; reconstruction formulas produce
# asymmetries no larger than a few ulps.
SYMMETRY_ATOL = 1e-12


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Cholesky factorization failed.

    ``pivot`` is the 0-based index of the first failing pivot.
    """

    def __init__(self, pivot: int):
        self.pivot = int(pivot)
        super().__init__(
            f"matrix is not positive definite (failing pivot index {self.pivot})"
        )


def _check_square_symmetric(cov: np.ndarray, atol: float = SYMMETRY_ATOL) -> np.ndarray:
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {cov.shape}")
    if not np.all(np.isfinite(cov)):
        raise ValueError("matrix contains non-finite values")
    asym = np.max(np.abs(cov - cov.T)) if cov.size else 0.0
    if asym > atol:
        raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    return cov


@dataclass(frozen=True, eq=False)
class JointGaussian:
    """Joint distribution over all agent positions at one time step.

    The covariance is symmetrized ((S + S^T)/2) on construction. Positive
    semidefiniteness is not enforced here: assembled covariances may be
    singular or slightly indefinite by design and are regularized by the
    consumer before any factorization.

    Attributes:
        mean: (2N,) positions, interleaved [x1, y1, ..., xN, yN].
        cov: (2N, 2N) covariance.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        if mean.ndim != 1 or mean.size < 2 or mean.size % 2 != 0:
            raise ValueError(f"mean must have even length >= 2, got shape {mean.shape}")
        if not np.all(np.isfinite(mean)):
            raise ValueError("mean contains non-finite values")
        cov = _check_square_symmetric(self.cov)
        if cov.shape[0] != mean.size:
            raise ValueError(
                f"cov shape {cov.shape} does not match mean length {mean.size}"
            )
        cov = (cov + cov.T) / 2.0
        mean = mean.copy()
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def n_agents(self) -> int:
        return self.mean.size // 2


@dataclass(frozen=True, eq=False)
class CholeskyFactor:
    """Lower-triangular factor L with L L^T equal to the factored matrix."""

    lower: np.ndarray
    log_det: float


def tikhonov_regularize(cov: np.ndarray, delta: float) -> np.ndarray:
    """Return ``cov + delta * I``; off-diagonal entries are untouched."""
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {cov.shape}")
    if delta < 0.0:
        raise ValueError("delta must be nonnegative")
    return cov + delta * np.eye(cov.shape[0])


def cholesky_factor(cov: np.ndarray) -> CholeskyFactor:
    """Factor a symmetric positive definite matrix as L L^T.

    Raises:
        NotPositiveDefiniteError: with the index of the failing pivot.
        ValueError: non-square or non-symmetric input.
    """
    cov = _check_square_symmetric(cov)
    lower, info = dpotrf(cov, lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefiniteError(info - 1)
    if info < 0:
        raise ValueError(f"illegal value in argument {-info} of dpotrf")
    log_det = 2.0 * float(np.sum(np.log(np.diag(lower))))
    return CholeskyFactor(lower=lower, log_det=log_det)


def scene_nll(dist: JointGaussian, observation: np.ndarray) -> float:
    """Negative log-likelihood of one observed step under the joint Gaussian.

    Returns 0.5 * [ln|S| + (f - m)^T S^-1 (f - m) + 2N ln(2 pi)] for a
    single step. The covariance must be positive definite; regularize
    first if it is not.
    """
    observation = np.asarray(observation, dtype=np.float64)
    if observation.shape != (dist.dim,):
        raise ValueError(
            f"observation shape {observation.shape} does not match dimension {dist.dim}"
        )
    factor = cholesky_factor(dist.cov)
    residual = observation - dist.mean
    white = solve_triangular(factor.lower, residual, lower=True)
    quad = float(white @ white)
    return 0.5 * (factor.log_det + quad + dist.dim * LOG_TWO_PI)


def trajectory_nll(
    dists: Sequence[JointGaussian], observations: np.ndarray
) -> float:
    """Sum of per-step NLL values over a trajectory.

    ``observations`` has shape (T, 2N). Terms are accumulated in step
    order so the result is reproducible bit-for-bit.
    """
    observations = np.asarray(observations, dtype=np.float64)
    if observations.ndim != 2 or observations.shape[0] != len(dists):
        raise ValueError(
            f"observations shape {observations.shape} does not match {len(dists)} steps"
        )
    total = 0.0
    for dist, row in zip(dists, observations):
        total += scene_nll(dist, row)
    return total


def sample_joint(dist: JointGaussian, seed: int, count: int) -> np.ndarray:
    """Draw ``count`` samples as mean + L z with z standard normal.

    The generator is numpy's PCG64 seeded with ``seed``; identical seeds
    give identical output. Returns an array of shape (count, 2N).
    """
    if count < 1:
        raise ValueError("count must be positive")
    factor = cholesky_factor(dist.cov)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((count, dist.dim))
    return dist.mean + z @ factor.lower.T


def marginalize_agent(dist: JointGaussian, agent_index: int) -> JointGaussian:
    """Extract one agent's 2-D marginal (mean slice and diagonal block)."""
    n = dist.n_agents
    if not 0 <= agent_index < n:
        raise IndexError(f"agent index {agent_index} out of range for {n} agents")
    sl = slice(2 * agent_index, 2 * agent_index + 2)
    return JointGaussian(mean=dist.mean[sl], cov=dist.cov[sl, sl])


def min_eigenvalue(cov: np.ndarray) -> float:
    """Smallest eigenvalue of a symmetric matrix (diagnostic helper)."""
    return float(np.linalg.eigvalsh(np.asarray(cov, dtype=np.float64))[0])
