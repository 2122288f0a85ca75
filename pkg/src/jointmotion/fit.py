"""Maximum-likelihood recovery of increment correlations.

The objective is the scene-level negative log-likelihood of observed
futures under per-step joint Gaussians assembled from fixed ground-truth
marginals and headings; only the cross-agent correlation parameters (or
the relevance head producing them) are free. Keeping the marginals
pinned isolates the cross-agent structure from regression quality.

Gradients are analytic: for each step, dNLL/dCov = 0.5 (Cov^-1 -
Cov^-1 S Cov^-1) with S the mean residual outer product, chain-ruled
through the assembly's sign pattern to the pair correlations and, for
the relevance head, through cosine similarity, the feature transform and
attention. The optimizer is Adam (beta1 0.9, beta2 0.999, eps 1e-8),
fully deterministic given the seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import solve_triangular
from scipy.linalg.lapack import dpotrf

from .gaussian import LOG_TWO_PI, NotPositiveDefiniteError
from .increments import (
    IncrementParams,
    Marginals,
    _assemble_cov,
    _diag_blocks,
    _sign_sigma_interleaved,
    projected_marginals,
)
from .relevance import RelevanceHead, relevance_backward, relevance_forward_cached
from .scene import Scene
from .synthetic import SceneTruth, ScenarioConfig, sample_future_positions

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

PARAMETERIZATIONS = ("direct-rho", "relevance-head")


class StepFactorizationError(NotPositiveDefiniteError):
    """A per-step covariance could not be factored during fitting."""

    def __init__(self, step: int, pivot: int):
        NotPositiveDefiniteError.__init__(self, pivot)
        self.step = step
        self.args = (
            f"covariance at future step {step} is not positive definite "
            f"(failing pivot index {pivot}); increase delta_reg",
        )


@dataclass
class FitConfig:
    """Optimizer and model settings for a fit run."""

    learning_rate: float = 0.05
    max_iters: int = 500
    delta_reg: float = 1e-4
    parameterization: str = "direct-rho"
    seed: int = 0
    convergence_tol: float = 1e-9
    feature_dim: int = 8

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.delta_reg < 0.0:
            raise ValueError("delta_reg must be nonnegative")
        if self.parameterization not in PARAMETERIZATIONS:
            raise ValueError(
                f"parameterization must be one of {PARAMETERIZATIONS}, "
                f"got {self.parameterization!r}"
            )
        if self.convergence_tol < 0.0:
            raise ValueError("convergence_tol must be nonnegative")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "max_iters": self.max_iters,
            "delta_reg": self.delta_reg,
            "parameterization": self.parameterization,
            "seed": self.seed,
            "convergence_tol": self.convergence_tol,
            "feature_dim": self.feature_dim,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "FitConfig":
        if not isinstance(payload, dict):
            raise ValueError("fit config must be a JSON object")
        unknown = set(payload) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown fit config fields: {sorted(unknown)}")
        return cls(**payload)


@dataclass
class FitReport:
    """Outcome of a fit: trace, recovered correlations, failure status."""

    final_nll: float
    nll_trace: np.ndarray
    recovered_rho: np.ndarray
    iterations_run: int
    delta_reg_used: float
    parameterization: str
    failure_flag: bool = False
    failure_reason: Optional[str] = None

    def to_dict(self) -> dict:
        final = self.final_nll
        return {
            # strict JSON: a failed fit has no final objective value
            "final_nll": None if np.isnan(final) else float(final),
            "nll_trace": np.asarray(self.nll_trace).tolist(),
            "recovered_rho": np.asarray(self.recovered_rho).tolist(),
            "iterations_run": self.iterations_run,
            "delta_reg_used": self.delta_reg_used,
            "parameterization": self.parameterization,
            "failure_flag": self.failure_flag,
            "failure_reason": self.failure_reason,
        }


class FitDataset:
    """Observed futures of one scene family, with its fixed ground truth.

    All futures share the current positions, per-step headings and
    increment parameters; only the realized futures differ. Sufficient
    statistics (per-step residual scatter matrices) are precomputed so
    one objective evaluation costs O(T (2N)^3) regardless of the number
    of futures.

    ``latents`` are per-step stand-in backbone features for the
    relevance-head parameterization: standard normal draws from PCG64
    seeded with ``latent_seed``, shape (T, N, feature_dim).
    """

    def __init__(
        self,
        current: np.ndarray,
        theta: np.ndarray,
        mu_delta: np.ndarray,
        sigma_delta: np.ndarray,
        futures: np.ndarray,
        feature_dim: int = 8,
        latent_seed: int = 0,
    ):
        self.current = np.asarray(current, dtype=np.float64)
        self.theta = np.asarray(theta, dtype=np.float64)
        self.mu_delta = np.asarray(mu_delta, dtype=np.float64)
        self.sigma_delta = np.asarray(sigma_delta, dtype=np.float64)
        self.futures = np.asarray(futures, dtype=np.float64)

        n = self.current.shape[0] if self.current.ndim == 2 else 0
        if self.current.ndim != 2 or self.current.shape != (n, 2) or n < 1:
            raise ValueError(f"current: expected (N, 2), got {self.current.shape}")
        if self.theta.ndim != 2 or self.theta.shape[1] != n:
            raise ValueError(f"theta: expected (T, {n}), got {self.theta.shape}")
        t_fut = self.theta.shape[0]
        for name, arr in (("mu_delta", self.mu_delta), ("sigma_delta", self.sigma_delta)):
            if arr.shape != (t_fut, n):
                raise ValueError(f"{name}: expected ({t_fut}, {n}), got {arr.shape}")
        if self.futures.ndim != 4 or self.futures.shape[1:] != (n, t_fut, 2):
            raise ValueError(
                f"futures: expected (K, {n}, {t_fut}, 2), got {self.futures.shape}"
            )
        if np.any(self.sigma_delta <= 0.0):
            raise ValueError("fitting needs strictly positive increment sigmas")

        self.n_agents = n
        self.t_fut = t_fut
        self.n_futures = self.futures.shape[0]
        self.n_pairs = n * (n - 1) // 2

        self.marginals: List[Marginals] = [
            projected_marginals(
                IncrementParams(mu=self.mu_delta[t], sigma=self.sigma_delta[t]),
                self.theta[t],
                self.current,
            )
            for t in range(t_fut)
        ]
        self.means = np.stack([m.mean_vector() for m in self.marginals])
        self.signed_sigma = np.stack(
            [_sign_sigma_interleaved(m, self.theta[t]) for t, m in enumerate(self.marginals)]
        )
        self.blocks = np.stack([_diag_blocks(m) for m in self.marginals])

        flat = self.futures.transpose(0, 2, 1, 3).reshape(self.n_futures, t_fut, 2 * n)
        self.residuals = flat - self.means[None, :, :]
        self.scatter = np.einsum("kta,ktb->tab", self.residuals, self.residuals)
        self.scatter /= self.n_futures

        rng = np.random.default_rng(latent_seed)
        self.latents = rng.standard_normal((t_fut, n, feature_dim))

    @classmethod
    def from_scenes(
        cls,
        scenes: Sequence[Scene],
        truth: SceneTruth,
        feature_dim: int = 8,
        latent_seed: int = 0,
    ) -> "FitDataset":
        """Build from scenes sharing one family (identical past and yaw)."""
        if not scenes:
            raise ValueError("dataset needs at least one scene")
        first = scenes[0]
        for scene in scenes[1:]:
            if not (
                np.array_equal(scene.past, first.past)
                and np.array_equal(scene.yaw, first.yaw)
            ):
                raise ValueError("scenes do not share one past/yaw family")
        futures = np.stack([scene.future for scene in scenes])
        return cls(
            current=first.current,
            theta=first.yaw.T,
            mu_delta=truth.mu_delta,
            sigma_delta=truth.sigma_delta,
            futures=futures,
            feature_dim=feature_dim,
            latent_seed=latent_seed,
        )

    @classmethod
    def from_config(
        cls,
        config: ScenarioConfig,
        n_futures: int,
        feature_dim: int = 8,
        latent_seed: int = 0,
    ) -> "FitDataset":
        """Sample a family directly, skipping Scene object construction.

        Requires zero heading noise so all futures share one set of
        per-step headings.
        """
        if config.heading_noise != 0.0:
            raise ValueError("fit datasets need heading_noise == 0 (shared headings)")
        futures, yaws, current, truth = sample_future_positions(config, n_futures)
        return cls(
            current=current,
            theta=yaws[0].T,
            mu_delta=truth.mu_delta,
            sigma_delta=truth.sigma_delta,
            futures=futures,
            feature_dim=feature_dim,
            latent_seed=latent_seed,
        )


def _triu(n: int) -> Tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(n, k=1)


class DirectRhoParams:
    """Per-step pair correlations through a tanh map.

    Stores one unconstrained scalar per agent pair and future step;
    tanh keeps every correlation inside (-1, 1) with smooth gradients
    near the boundary. That is N (N - 1) / 2 stored cross-agent scalars
    per step, against 4 N (N - 1) / 2 for a four-correlation planar
    parameterization.
    """

    def __init__(self, raw: np.ndarray, n_agents: int):
        raw = np.asarray(raw, dtype=np.float64)
        n_pairs = n_agents * (n_agents - 1) // 2
        if raw.ndim != 2 or raw.shape[1] != n_pairs:
            raise ValueError(f"raw: expected (T, {n_pairs}), got {raw.shape}")
        self.raw = raw
        self.n_agents = n_agents
        self.t_fut = raw.shape[0]

    @classmethod
    def zeros(cls, t_fut: int, n_agents: int) -> "DirectRhoParams":
        return cls(np.zeros((t_fut, n_agents * (n_agents - 1) // 2)), n_agents)

    @classmethod
    def from_rho(cls, rho: np.ndarray, t_fut: Optional[int] = None) -> "DirectRhoParams":
        """Initialize at given correlations (|rho| < 1), one (N, N) matrix
        shared by all steps or a (T, N, N) stack."""
        rho = np.asarray(rho, dtype=np.float64)
        if rho.ndim == 2:
            if t_fut is None:
                raise ValueError("t_fut required for a single shared matrix")
            rho = np.broadcast_to(rho, (t_fut,) + rho.shape)
        n = rho.shape[1]
        iu, ju = _triu(n)
        pairs = rho[:, iu, ju]
        if np.any(np.abs(pairs) >= 1.0):
            raise ValueError("tanh parameterization needs |rho| < 1")
        return cls(np.arctanh(pairs), n)

    def vector(self) -> np.ndarray:
        return self.raw.ravel().copy()

    def with_vector(self, vector: np.ndarray) -> "DirectRhoParams":
        return DirectRhoParams(
            np.asarray(vector, dtype=np.float64).reshape(self.raw.shape), self.n_agents
        )

    def rho_matrices(self, dataset: Optional[FitDataset] = None) -> np.ndarray:
        """(T, N, N) correlation matrices with unit diagonal."""
        n = self.n_agents
        iu, ju = _triu(n)
        rho = np.tile(np.eye(n), (self.t_fut, 1, 1))
        values = np.tanh(self.raw)
        rho[:, iu, ju] = values
        rho[:, ju, iu] = values
        return rho

    def value_and_grad(
        self, dataset: FitDataset, delta_reg: float
    ) -> Tuple[float, np.ndarray]:
        rho = self.rho_matrices(dataset)
        value, d_rho = _nll_over_rho(rho, dataset, delta_reg, want_grad=True)
        iu, ju = _triu(self.n_agents)
        pair_grad = d_rho[:, iu, ju] + d_rho[:, ju, iu]
        raw_grad = pair_grad * (1.0 - np.tanh(self.raw) ** 2)
        return value, raw_grad.ravel()

    def value(self, dataset: FitDataset, delta_reg: float) -> float:
        rho = self.rho_matrices(dataset)
        value, _ = _nll_over_rho(rho, dataset, delta_reg, want_grad=False)
        return value


class RelevanceParams:
    """Correlations produced by the relevance head on per-step latents."""

    def __init__(self, head: RelevanceHead):
        self.head = head

    @classmethod
    def initialize(cls, feature_dim: int, seed: int) -> "RelevanceParams":
        return cls(RelevanceHead.initialize(feature_dim, seed))

    def vector(self) -> np.ndarray:
        return self.head.pack()

    def with_vector(self, vector: np.ndarray) -> "RelevanceParams":
        return RelevanceParams(RelevanceHead.unpack(vector, self.head.feature_dim))

    def _forward(self, dataset: FitDataset):
        if dataset.latents.shape[2] != self.head.feature_dim:
            raise ValueError(
                f"dataset latents have width {dataset.latents.shape[2]}, "
                f"head expects {self.head.feature_dim}"
            )
        rho = np.empty((dataset.t_fut, dataset.n_agents, dataset.n_agents))
        caches = []
        for t in range(dataset.t_fut):
            rho_t, cache = relevance_forward_cached(dataset.latents[t], self.head)
            rho[t] = rho_t
            caches.append(cache)
        return rho, caches

    def rho_matrices(self, dataset: FitDataset) -> np.ndarray:
        rho, _ = self._forward(dataset)
        return rho

    def value_and_grad(
        self, dataset: FitDataset, delta_reg: float
    ) -> Tuple[float, np.ndarray]:
        rho, caches = self._forward(dataset)
        value, d_rho = _nll_over_rho(rho, dataset, delta_reg, want_grad=True)
        grad = np.zeros_like(self.vector())
        for t in range(dataset.t_fut):
            grad += relevance_backward(caches[t], d_rho[t], self.head).pack()
        return value, grad

    def value(self, dataset: FitDataset, delta_reg: float) -> float:
        rho, _ = self._forward(dataset)
        value, _ = _nll_over_rho(rho, dataset, delta_reg, want_grad=False)
        return value


FitParams = Union[DirectRhoParams, RelevanceParams]


def _nll_over_rho(
    rho: np.ndarray, dataset: FitDataset, delta_reg: float, want_grad: bool
) -> Tuple[float, Optional[np.ndarray]]:
    """Objective (and its gradient w.r.t. every pair correlation).

    The objective is the mean over futures of the summed per-step NLL,
    computed from the precomputed scatter matrices:
    mean_k nll_k = sum_t 0.5 [ln|C_t| + tr(C_t^-1 S_t) + 2N ln 2pi].

    The returned gradient has shape (T, N, N) and treats every matrix
    entry as independent: entry (t, i, j) is the derivative with respect
    to rho[t, i, j] alone (zero diagonal). The derivative of the pair
    scalar shared by (i, j) and (j, i) is the sum of the two entries.
    """
    n = dataset.n_agents
    dim = 2 * n
    value = 0.0
    d_rho = np.zeros_like(rho) if want_grad else None
    eye = np.eye(dim)
    for t in range(dataset.t_fut):
        cov = _assemble_cov(rho[t], dataset.signed_sigma[t], dataset.blocks[t])
        cov += delta_reg * eye
        lower, info = dpotrf(cov, lower=1, clean=1)
        if info > 0:
            raise StepFactorizationError(step=t, pivot=info - 1)
        if info < 0:
            raise ValueError(f"illegal value in argument {-info} of dpotrf")
        log_det = 2.0 * float(np.sum(np.log(np.diag(lower))))
        half = solve_triangular(lower, dataset.scatter[t], lower=True)
        inv_scatter = solve_triangular(lower, half, lower=True, trans="T")
        value += 0.5 * (log_det + float(np.trace(inv_scatter)) + dim * LOG_TWO_PI)
        if want_grad:
            half_inv = solve_triangular(lower, eye, lower=True)
            inv = solve_triangular(lower, half_inv, lower=True, trans="T")
            grad_cov = 0.5 * (inv - inv_scatter @ inv)
            weighted = grad_cov * np.outer(dataset.signed_sigma[t], dataset.signed_sigma[t])
            block_sums = weighted.reshape(n, 2, n, 2).sum(axis=(1, 3))
            np.fill_diagonal(block_sums, 0.0)
            d_rho[t] = block_sums
    return value, d_rho


def make_params(config: FitConfig, dataset: FitDataset) -> FitParams:
    """Fresh parameters for a fit: zero correlations or a seeded head."""
    if config.parameterization == "direct-rho":
        return DirectRhoParams.zeros(dataset.t_fut, dataset.n_agents)
    return RelevanceParams.initialize(config.feature_dim, config.seed)


def nll_objective(params: FitParams, dataset: FitDataset, delta_reg: float) -> float:
    """Mean over futures of the summed per-step scene NLL."""
    return params.value(dataset, delta_reg)


def grad_nll(params: FitParams, dataset: FitDataset, delta_reg: float) -> np.ndarray:
    """Analytic gradient of :func:`nll_objective` w.r.t. the parameter vector."""
    _, grad = params.value_and_grad(dataset, delta_reg)
    return grad


def _clipped_rho(params: FitParams, dataset: FitDataset) -> np.ndarray:
    rho = params.rho_matrices(dataset)
    rho = np.clip(rho, -1.0, 1.0)
    rho = (rho + rho.transpose(0, 2, 1)) / 2.0
    for t in range(rho.shape[0]):
        np.fill_diagonal(rho[t], 1.0)
    return rho


def fit_parameters(
    config: FitConfig, dataset: FitDataset, initial: Optional[FitParams] = None
) -> FitReport:
    """Minimize the scene-level NLL with Adam.

    Stops on ``max_iters`` or when the objective changes by less than
    ``convergence_tol``. On a factorization failure the regularization
    is escalated once (x 10); a second failure aborts with the failure
    flag set and the report still filled in. ``initial`` warm-starts the
    optimizer in place of the default parameters.
    """
    params = make_params(config, dataset) if initial is None else initial
    x = params.vector()
    delta = config.delta_reg
    escalated = False
    failure_reason = None

    m = np.zeros_like(x)
    v = np.zeros_like(x)
    trace: List[float] = []
    steps_taken = 0

    iteration = 0
    while iteration < config.max_iters:
        try:
            value, grad = params.with_vector(x).value_and_grad(dataset, delta)
        except NotPositiveDefiniteError as exc:
            if not escalated:
                escalated = True
                delta = delta * 10.0
                continue
            failure_reason = f"factorization failed after delta escalation: {exc}"
            break
        trace.append(value)
        if len(trace) >= 2 and abs(trace[-2] - trace[-1]) < config.convergence_tol:
            break
        if x.size:
            steps_taken += 1
            m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * grad
            v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * grad * grad
            m_hat = m / (1.0 - ADAM_BETA1**steps_taken)
            v_hat = v / (1.0 - ADAM_BETA2**steps_taken)
            x = x - config.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        iteration += 1

    final_params = params.with_vector(x)
    return FitReport(
        final_nll=trace[-1] if trace else float("nan"),
        nll_trace=np.asarray(trace),
        recovered_rho=_clipped_rho(final_params, dataset),
        iterations_run=len(trace),
        delta_reg_used=delta,
        parameterization=config.parameterization,
        failure_flag=failure_reason is not None,
        failure_reason=failure_reason,
    )


def finite_difference_gradient(
    fun: Callable[[np.ndarray], float], x: np.ndarray, step: float
) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    if step <= 0.0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        bumped = x.copy()
        bumped[i] = x[i] + step
        upper = fun(bumped)
        bumped[i] = x[i] - step
        lower = fun(bumped)
        grad[i] = (upper - lower) / (2.0 * step)
    return grad


def relative_gradient_errors(
    analytic: np.ndarray, numeric: np.ndarray
) -> np.ndarray:
    """Per-component |a - n| / max(1, |a|, |n|).

    The unit floor in the denominator keeps finite-difference roundoff
    on near-zero components from registering as spurious error.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return np.abs(analytic - numeric) / denom


def gradient_check(
    params: FitParams,
    dataset: FitDataset,
    delta_reg: float = 1e-4,
    step: float = 1e-6,
) -> float:
    """Worst relative disagreement between analytic and numeric gradients."""
    analytic = grad_nll(params, dataset, delta_reg)
    if analytic.size == 0:
        return 0.0
    numeric = finite_difference_gradient(
        lambda vec: nll_objective(params.with_vector(vec), dataset, delta_reg),
        params.vector(),
        step,
    )
    return float(np.max(relative_gradient_errors(analytic, numeric)))
