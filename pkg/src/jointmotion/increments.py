"""Increment-correlation core.

Cross-agent interaction is parameterized by a single correlation per
agent pair, measured between the agents' one-dimensional displacement
increments from the current position. This module turns that compact
parameterization back into full planar joint Gaussians: heading
estimation from mean displacements, projection of increment
distributions onto the x-y plane, reconstruction of the four planar
correlation signs per pair, and assembly of the 2N x 2N covariance from
per-agent marginals.

All functions are pure and safe for concurrent use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from .gaussian import JointGaussian

ONES_2X2 = np.ones((2, 2))


class InvalidCorrelationError(ValueError):
    """A matrix violates the correlation-matrix invariants."""


class DegenerateHeadingError(ValueError):
    """A zero displacement vector has no defined heading."""


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    """Symmetric N x N correlation matrix with unit diagonal, entries in [-1, 1].

    Holds one scalar per agent pair: the correlation between the two
    agents' 1-D displacement increments at a given future step.
    """

    rho: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=np.float64)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1] or rho.shape[0] < 1:
            raise InvalidCorrelationError(f"expected square matrix, got {rho.shape}")
        if not np.all(np.isfinite(rho)):
            raise InvalidCorrelationError("correlation matrix has non-finite entries")
        if rho.size and np.max(np.abs(rho - rho.T)) > 1e-12:
            raise InvalidCorrelationError("correlation matrix is not symmetric")
        if np.max(np.abs(np.diag(rho) - 1.0)) > 1e-12:
            raise InvalidCorrelationError("correlation matrix diagonal must be 1")
        if np.max(np.abs(rho)) > 1.0:
            raise InvalidCorrelationError("correlation entries must lie in [-1, 1]")
        rho = (rho + rho.T) / 2.0
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)

    @property
    def n_agents(self) -> int:
        return self.rho.shape[0]

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.rho)[0])

    def is_positive_semidefinite(self, tol: float = 1e-9) -> bool:
        return self.min_eigenvalue() >= -tol


@dataclass(frozen=True, eq=False)
class IncrementParams:
    """Per-agent 1-D displacement distribution at one future step.

    ``mu`` are displacement magnitudes (nonnegative), ``sigma`` their
    standard deviations (positive), both in meters.
    """

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if mu.ndim != 1 or sigma.shape != mu.shape or mu.size < 1:
            raise ValueError(f"mu/sigma must be matching vectors, got {mu.shape} and {sigma.shape}")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise ValueError("increment parameters must be finite")
        if np.any(mu < 0.0):
            raise ValueError("mean displacements are magnitudes and must be >= 0")
        if np.any(sigma <= 0.0):
            raise ValueError("displacement sigmas must be positive")
        mu.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def n_agents(self) -> int:
        return self.mu.size


@dataclass(frozen=True, eq=False)
class Marginals:
    """Per-agent planar Gaussian parameters at one future step.

    Each agent's 2x2 block is [[sx^2, r sx sy], [r sx sy, sy^2]]. Blocks
    may be singular: marginals obtained by projecting 1-D increments have
    |r| = 1 (or a zero sigma for axis-aligned motion), which is exactly
    the rank deficiency the regularization step exists to absorb.
    """

    mu_x: np.ndarray
    mu_y: np.ndarray
    sigma_x: np.ndarray
    sigma_y: np.ndarray
    rho_xy: np.ndarray

    def __post_init__(self):
        fields = {}
        n = None
        for name in ("mu_x", "mu_y", "sigma_x", "sigma_y", "rho_xy"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.ndim != 1 or arr.size < 1:
                raise ValueError(f"{name} must be a vector, got shape {arr.shape}")
            if n is None:
                n = arr.size
            elif arr.size != n:
                raise ValueError("marginal fields must share one agent count")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            fields[name] = arr
        if np.any(fields["sigma_x"] < 0.0) or np.any(fields["sigma_y"] < 0.0):
            raise ValueError("sigmas must be nonnegative")
        if np.any(np.abs(fields["rho_xy"]) > 1.0):
            raise ValueError("rho_xy entries must lie in [-1, 1]")
        for name, arr in fields.items():
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_agents(self) -> int:
        return self.mu_x.size

    def mean_vector(self) -> np.ndarray:
        """(2N,) mean in the interleaved [x1, y1, ...] layout."""
        out = np.empty(2 * self.n_agents)
        out[0::2] = self.mu_x
        out[1::2] = self.mu_y
        return out

    def block(self, i: int) -> np.ndarray:
        """The 2x2 covariance block of agent ``i``."""
        sx = self.sigma_x[i]
        sy = self.sigma_y[i]
        cross = self.rho_xy[i] * sx * sy
        return np.array([[sx * sx, cross], [cross, sy * sy]])


def wrap_angle(angle):
    """Wrap angles to (-pi, pi]."""
    wrapped = np.remainder(np.asarray(angle, dtype=np.float64) + np.pi, 2.0 * np.pi) - np.pi
    wrapped = np.where(wrapped == -np.pi, np.pi, wrapped)
    return float(wrapped) if np.ndim(angle) == 0 else wrapped


def estimate_yaw(dx: float, dy: float) -> float:
    """Approximate heading of a displacement vector, in (-pi, pi].

    Raises:
        DegenerateHeadingError: both components are exactly zero (a
            stationary agent has no displacement heading).
    """
    if not (math.isfinite(dx) and math.isfinite(dy)):
        raise ValueError("displacement components must be finite")
    if dx == 0.0 and dy == 0.0:
        raise DegenerateHeadingError("zero displacement has no heading")
    angle = math.atan2(dy, dx)
    return math.pi if angle == -math.pi else angle


def yaw_from_displacements(
    displacements: np.ndarray, fallback: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized heading estimate with a policy for stationary agents.

    For rows with zero displacement the heading falls back to the
    corresponding ``fallback`` entry (typically the last observed
    heading), or 0 when no fallback is given; those agents are flagged
    in the returned mask.

    Returns:
        (theta, degenerate_mask): (N,) headings in (-pi, pi] and a (N,)
        boolean mask marking agents that needed the fallback.
    """
    displacements = np.asarray(displacements, dtype=np.float64)
    if displacements.ndim != 2 or displacements.shape[1] != 2:
        raise ValueError(f"expected (N, 2) displacements, got {displacements.shape}")
    degenerate = (displacements[:, 0] == 0.0) & (displacements[:, 1] == 0.0)
    theta = np.arctan2(displacements[:, 1], displacements[:, 0])
    theta = np.where(theta == -np.pi, np.pi, theta)
    if np.any(degenerate):
        if fallback is not None:
            fallback = np.asarray(fallback, dtype=np.float64)
            if fallback.shape != (displacements.shape[0],):
                raise ValueError("fallback must hold one heading per agent")
            theta = np.where(degenerate, fallback, theta)
        else:
            theta = np.where(degenerate, 0.0, theta)
    return theta, degenerate


def _as_correlation(corr: Union[CorrelationMatrix, np.ndarray]) -> CorrelationMatrix:
    if isinstance(corr, CorrelationMatrix):
        return corr
    return CorrelationMatrix(np.asarray(corr))


def _trig_interleaved(theta: np.ndarray) -> np.ndarray:
    """(2N,) vector [cos t1, sin t1, cos t2, sin t2, ...]."""
    out = np.empty(2 * theta.size)
    out[0::2] = np.cos(theta)
    out[1::2] = np.sin(theta)
    return out


def project_increments(
    inc: IncrementParams,
    corr: Union[CorrelationMatrix, np.ndarray],
    theta: np.ndarray,
    current: np.ndarray,
) -> JointGaussian:
    """Project 1-D increment distributions onto the plane along headings.

    The mean is the current position plus the rotated mean displacement;
    the covariance is the congruence of the replicated increment
    covariance with the block-diagonal cos/sin rotation, equivalently

        cov[2i+a, 2j+b] = rho[i, j] * sigma_i * sigma_j * trig_a(i) * trig_b(j)

    with trig_0 = cos and trig_1 = sin. The result has rank at most N
    (each agent moves on a line), so callers must regularize before any
    factorization or sampling.
    """
    corr = _as_correlation(corr)
    theta = np.asarray(theta, dtype=np.float64)
    current = np.asarray(current, dtype=np.float64)
    n = inc.n_agents
    if theta.shape != (n,):
        raise ValueError(f"theta: expected ({n},), got {theta.shape}")
    if current.shape != (n, 2):
        raise ValueError(f"current: expected ({n}, 2), got {current.shape}")
    if corr.n_agents != n:
        raise ValueError(
            f"correlation matrix is {corr.n_agents}x{corr.n_agents}, expected {n}x{n}"
        )
    trig = _trig_interleaved(theta)
    scaled = trig * np.repeat(inc.sigma, 2)
    cov = np.outer(scaled, scaled) * np.kron(corr.rho, ONES_2X2)
    mean = current.reshape(-1) + trig * np.repeat(inc.mu, 2)
    return JointGaussian(mean=mean, cov=cov)


def reconstruct_cross_correlations(
    rho_delta: float, theta_i: float, theta_j: float
) -> np.ndarray:
    """Planar correlation signs for one agent pair.

    Returns the 2x2 matrix [[r_xx, r_xy], [r_yx, r_yy]] where each entry
    is ``rho_delta`` times the sign of the matching cos/sin product of
    the two headings. sgn(0) is taken as 0, so an axis-aligned agent
    contributes no correlation along its orthogonal axis.
    """
    if not -1.0 <= rho_delta <= 1.0:
        raise ValueError("rho_delta must lie in [-1, 1]")
    ci, si = math.cos(theta_i), math.sin(theta_i)
    cj, sj = math.cos(theta_j), math.sin(theta_j)
    signs = np.sign(np.array([[ci * cj, ci * sj], [si * cj, si * sj]]))
    return rho_delta * signs


def _sign_sigma_interleaved(marg: Marginals, theta: np.ndarray) -> np.ndarray:
    """(2N,) vector sgn(cos t_i) sx_i, sgn(sin t_i) sy_i used for off-diagonal blocks."""
    signs = np.sign(_trig_interleaved(theta))
    out = np.empty(2 * marg.n_agents)
    out[0::2] = marg.sigma_x
    out[1::2] = marg.sigma_y
    return signs * out


def _diag_blocks(marg: Marginals) -> np.ndarray:
    """(N, 2, 2) per-agent marginal covariance blocks."""
    cross = marg.rho_xy * marg.sigma_x * marg.sigma_y
    blocks = np.empty((marg.n_agents, 2, 2))
    blocks[:, 0, 0] = marg.sigma_x * marg.sigma_x
    blocks[:, 0, 1] = cross
    blocks[:, 1, 0] = cross
    blocks[:, 1, 1] = marg.sigma_y * marg.sigma_y
    return blocks


def _assemble_cov(rho: np.ndarray, signed_sigma: np.ndarray, diag_blocks: np.ndarray) -> np.ndarray:
    """Dense 2N x 2N covariance from pairwise correlations and marginal blocks."""
    cov = np.outer(signed_sigma, signed_sigma) * np.kron(rho, ONES_2X2)
    n = diag_blocks.shape[0]
    for i in range(n):
        cov[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = diag_blocks[i]
    return cov


def assemble_joint(
    marg: Marginals,
    corr: Union[CorrelationMatrix, np.ndarray],
    theta: np.ndarray,
) -> JointGaussian:
    """Extend per-agent marginals to a full joint Gaussian for one step.

    Diagonal 2x2 blocks are exactly the marginal blocks. The (i, j)
    off-diagonal block carries ``corr.rho[i, j]`` times the reconstructed
    sign pattern of the two headings, scaled by the marginal sigmas. The
    result is not regularized; consumers add delta * I before inverting.
    """
    corr = _as_correlation(corr)
    theta = np.asarray(theta, dtype=np.float64)
    n = marg.n_agents
    if theta.shape != (n,):
        raise ValueError(f"theta: expected ({n},), got {theta.shape}")
    if corr.n_agents != n:
        raise ValueError(
            f"correlation matrix is {corr.n_agents}x{corr.n_agents}, expected {n}x{n}"
        )
    cov = _assemble_cov(corr.rho, _sign_sigma_interleaved(marg, theta), _diag_blocks(marg))
    return JointGaussian(mean=marg.mean_vector(), cov=cov)


def projected_marginals(
    inc: IncrementParams, theta: np.ndarray, current: np.ndarray
) -> Marginals:
    """Per-agent marginals implied by projecting 1-D increments along headings.

    sx = |cos t| sigma, sy = |sin t| sigma, r_xy = sgn(cos t) sgn(sin t);
    the means are the current positions advanced by the rotated mean
    displacement. The implied blocks are rank one.
    """
    theta = np.asarray(theta, dtype=np.float64)
    current = np.asarray(current, dtype=np.float64)
    n = inc.n_agents
    if theta.shape != (n,):
        raise ValueError(f"theta: expected ({n},), got {theta.shape}")
    if current.shape != (n, 2):
        raise ValueError(f"current: expected ({n}, 2), got {current.shape}")
    c = np.cos(theta)
    s = np.sin(theta)
    return Marginals(
        mu_x=current[:, 0] + c * inc.mu,
        mu_y=current[:, 1] + s * inc.mu,
        sigma_x=np.abs(c) * inc.sigma,
        sigma_y=np.abs(s) * inc.sigma,
        rho_xy=np.sign(c) * np.sign(s),
    )


def equivalence_check(
    inc: IncrementParams,
    corr: Union[CorrelationMatrix, np.ndarray],
    theta: np.ndarray,
    current: np.ndarray,
    approx_theta: Optional[np.ndarray] = None,
) -> float:
    """Max absolute covariance deviation between the two construction routes.

    Route one projects the increment distribution directly with the true
    headings ``theta``. Route two derives per-agent marginals from the
    increments and reassembles the joint through the sign-pattern
    reconstruction, using ``approx_theta`` (defaults to ``theta``). The
    routes agree to rounding when the approximate headings equal the
    true ones, and drift apart continuously as they are perturbed.
    """
    if approx_theta is None:
        approx_theta = theta
    approx_theta = np.asarray(approx_theta, dtype=np.float64)
    direct = project_increments(inc, corr, np.asarray(theta, dtype=np.float64), current)
    marg = projected_marginals(inc, approx_theta, current)
    assembled = assemble_joint(marg, corr, approx_theta)
    return float(np.max(np.abs(direct.cov - assembled.cov)))


def pair_count(n_agents: int) -> int:
    """Number of stored cross-agent parameters: one scalar per pair."""
    return n_agents * (n_agents - 1) // 2


def planar_pair_count(n_agents: int) -> int:
    """Cross-agent parameters a four-correlation planar parameterization stores."""
    return 4 * (n_agents * (n_agents - 1) // 2)
