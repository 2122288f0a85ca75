"""Synthetic interacting-agent scenes with known ground truth.

Scenes are built from correlated one-dimensional step increments
integrated along per-agent headings: a "follow" pattern puts strongly
positive increment correlation on pairs sharing a lane, "yield" puts
strongly negative correlation on crossing pairs, and "independent"
leaves all pairs uncorrelated. The generator returns the exact
correlation matrix and per-step increment distributions it sampled
from, so recovery experiments have a ground truth to compare against.

Also home to the brute-force estimators used as oracles elsewhere:
empirical increment correlation and heading-approximation error
statistics.

Units: positions are meters and one step is 0.5 s (2 Hz sampling); the
default base speed of 2.5 m/step corresponds to 5 m/s.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np

from .increments import CorrelationMatrix, IncrementParams, InvalidCorrelationError, wrap_angle
from .scene import Scene

PATTERNS = ("follow", "yield", "independent", "mixed")

# Sub-streams of the scenario seed (PCG64 seeded with [seed, stream]).
_STREAM_FAMILY = 0
_STREAM_FUTURES = 1
_STREAM_LATENTS = 2


@dataclass
class ScenarioConfig:
    """Controls for the synthetic scene generator.

    ``target_rho`` is either a scalar correlation magnitude applied to
    the pattern's designated pairs, or a full N x N correlation matrix
    (which must be positive semidefinite; invalid matrices are rejected,
    never projected). ``noise_sigma`` is the standard deviation of each
    per-step 1-D increment. ``curvature`` bends every trajectory by a
    fixed heading change per step and ``heading_noise`` jitters the
    per-step heading; both default to zero, which keeps trajectories on
    exact rays and the returned ground truth exact.
    """

    pattern: str
    n_agents: int
    t_obs: int = 4
    t_fut: int = 12
    target_rho: Union[float, Sequence] = 0.8
    base_speed: float = 2.5
    noise_sigma: float = 0.5
    seed: int = 0
    curvature: float = 0.0
    heading_noise: float = 0.0
    n_scenes: int = 1

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValueError(f"pattern must be one of {PATTERNS}, got {self.pattern!r}")
        if self.n_agents < 1:
            raise ValueError("n_agents must be >= 1")
        if self.t_obs < 1 or self.t_fut < 1:
            raise ValueError("t_obs and t_fut must be >= 1")
        if self.base_speed <= 0.0:
            raise ValueError("base_speed must be positive")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be nonnegative")
        if self.heading_noise < 0.0:
            raise ValueError("heading_noise must be nonnegative")
        if self.n_scenes < 1:
            raise ValueError("n_scenes must be >= 1")

    def to_dict(self) -> dict:
        rho = self.target_rho
        if isinstance(rho, np.ndarray):
            rho = rho.tolist()
        return {
            "pattern": self.pattern,
            "n_agents": self.n_agents,
            "t_obs": self.t_obs,
            "t_fut": self.t_fut,
            "target_rho": rho,
            "base_speed": self.base_speed,
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
            "curvature": self.curvature,
            "heading_noise": self.heading_noise,
            "n_scenes": self.n_scenes,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ScenarioConfig":
        if not isinstance(payload, dict):
            raise ValueError("scenario config must be a JSON object")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(payload) - known
        if unknown:
            raise ValueError(f"unknown scenario config fields: {sorted(unknown)}")
        if "pattern" not in payload or "n_agents" not in payload:
            raise ValueError("scenario config requires 'pattern' and 'n_agents'")
        return cls(**payload)


@dataclass
class SceneTruth:
    """Ground truth the generator sampled from.

    ``mu_delta[t - 1, i]`` and ``sigma_delta[t - 1, i]`` parameterize
    agent i's 1-D displacement from the current position to future step
    t; ``rho`` is the increment correlation matrix shared by all steps.
    Exact for straight scenes (zero curvature and heading noise).
    """

    rho: CorrelationMatrix
    mu_delta: np.ndarray
    sigma_delta: np.ndarray

    def __post_init__(self):
        self.mu_delta = np.asarray(self.mu_delta, dtype=np.float64)
        self.sigma_delta = np.asarray(self.sigma_delta, dtype=np.float64)
        n = self.rho.n_agents
        if self.mu_delta.ndim != 2 or self.mu_delta.shape[1] != n:
            raise ValueError(f"mu_delta: expected (T, {n}), got {self.mu_delta.shape}")
        if self.sigma_delta.shape != self.mu_delta.shape:
            raise ValueError("sigma_delta must match mu_delta")

    @property
    def t_fut(self) -> int:
        return self.mu_delta.shape[0]

    def increment_params(self, step: int) -> IncrementParams:
        """IncrementParams for future step ``step`` (0-based)."""
        return IncrementParams(mu=self.mu_delta[step], sigma=self.sigma_delta[step])

    def to_dict(self) -> dict:
        return {
            "rho": self.rho.rho.tolist(),
            "mu_delta": self.mu_delta.tolist(),
            "sigma_delta": self.sigma_delta.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "SceneTruth":
        return cls(
            rho=CorrelationMatrix(np.asarray(payload["rho"])),
            mu_delta=np.asarray(payload["mu_delta"]),
            sigma_delta=np.asarray(payload["sigma_delta"]),
        )


def _pattern_pairs(pattern: str, n: int) -> List[Tuple[int, int, float]]:
    """(i, j, sign) couplings for a pattern; sign scales |target_rho|."""
    pairs = [(2 * k, 2 * k + 1) for k in range(n // 2)]
    if pattern == "follow":
        return [(i, j, 1.0) for i, j in pairs]
    if pattern == "yield":
        return [(i, j, -1.0) for i, j in pairs]
    if pattern == "independent":
        return []
    coupled = []
    for index, (i, j) in enumerate(pairs[:2]):
        coupled.append((i, j, 1.0 if index == 0 else -1.0))
    return coupled


def correlation_for(config: ScenarioConfig) -> CorrelationMatrix:
    """The increment correlation matrix implied by a config.

    Raises:
        InvalidCorrelationError: the implied matrix is not a valid PSD
            correlation matrix. Rejected, never repaired: silent
            projection would corrupt recovery experiments.
    """
    n = config.n_agents
    target = config.target_rho
    if np.ndim(target) == 0:
        magnitude = float(target)
        if not -1.0 <= magnitude <= 1.0:
            raise InvalidCorrelationError("scalar target_rho must lie in [-1, 1]")
        rho = np.eye(n)
        for i, j, sign in _pattern_pairs(config.pattern, n):
            rho[i, j] = rho[j, i] = sign * abs(magnitude)
        corr = CorrelationMatrix(rho)
    else:
        arr = np.asarray(target, dtype=np.float64)
        if arr.shape != (n, n):
            raise InvalidCorrelationError(
                f"target_rho matrix must be ({n}, {n}), got {arr.shape}"
            )
        corr = CorrelationMatrix(arr)
    if not corr.is_positive_semidefinite():
        raise InvalidCorrelationError(
            f"target correlation matrix is not positive semidefinite "
            f"(min eigenvalue {corr.min_eigenvalue():.3e})"
        )
    return corr


def _psd_factor(rho: np.ndarray) -> np.ndarray:
    """A with A A^T = rho, valid for singular PSD matrices."""
    eigvals, eigvecs = np.linalg.eigh(rho)
    return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


def _geometry(config: ScenarioConfig, rng: np.random.Generator):
    """Base headings and start positions realizing the pattern."""
    n = config.n_agents
    headings = rng.uniform(-np.pi, np.pi, size=n)
    starts = rng.uniform(-30.0, 30.0, size=(n, 2))
    gap = 2.0 + 2.0 * config.base_speed
    approach = 4.0 * config.base_speed

    def make_follow(i, j):
        headings[j] = headings[i]
        starts[j] = starts[i] - gap * np.array([np.cos(headings[i]), np.sin(headings[i])])

    def make_yield(i, j):
        headings[j] = wrap_angle(headings[i] + np.pi / 2.0)
        crossing = starts[i] + approach * np.array([np.cos(headings[i]), np.sin(headings[i])])
        starts[j] = crossing - 1.5 * approach * np.array(
            [np.cos(headings[j]), np.sin(headings[j])]
        )

    if config.pattern == "follow":
        for i, j, _ in _pattern_pairs("follow", n):
            make_follow(i, j)
    elif config.pattern == "yield":
        for i, j, _ in _pattern_pairs("yield", n):
            make_yield(i, j)
    elif config.pattern == "mixed":
        for i, j, sign in _pattern_pairs("mixed", n):
            if sign > 0:
                make_follow(i, j)
            else:
                make_yield(i, j)
    return headings, starts


def _walk(
    config: ScenarioConfig,
    start: np.ndarray,
    base_heading: np.ndarray,
    deltas: np.ndarray,
    jitter: np.ndarray,
    first_step_index: int,
):
    """Integrate per-step 1-D increments along evolving headings.

    ``deltas`` and ``jitter`` have shape (steps, N). Returns positions
    (steps, N, 2) and the per-step headings (steps, N).
    """
    steps = deltas.shape[0]
    n = deltas.shape[1]
    positions = np.empty((steps, n, 2))
    headings = np.empty((steps, n))
    point = start.copy()
    for s in range(steps):
        h = base_heading + config.curvature * (first_step_index + s) + jitter[s]
        h = wrap_angle(h)
        point = point + deltas[s][:, None] * np.stack([np.cos(h), np.sin(h)], axis=1)
        positions[s] = point
        headings[s] = h
    return positions, headings


def _simulate(config: ScenarioConfig, count: int):
    """Shared core: one fixed past plus ``count`` sampled futures."""
    corr = correlation_for(config)
    factor = _psd_factor(corr.rho)
    n = config.n_agents
    t_obs, t_fut = config.t_obs, config.t_fut

    rng_family = np.random.default_rng([config.seed, _STREAM_FAMILY])
    base_heading, starts = _geometry(config, rng_family)

    def draw_deltas(rng, shape_prefix):
        z = rng.standard_normal(shape_prefix + (n,))
        correlated = z @ factor.T
        return config.base_speed + config.noise_sigma * correlated

    def draw_jitter(rng, shape_prefix):
        if config.heading_noise == 0.0:
            return np.zeros(shape_prefix + (n,))
        return config.heading_noise * rng.standard_normal(shape_prefix + (n,))

    past_steps = t_obs - 1
    past = np.empty((n, t_obs, 2))
    past[:, 0] = starts
    if past_steps:
        past_positions, _ = _walk(
            config,
            starts,
            base_heading,
            draw_deltas(rng_family, (past_steps,)),
            draw_jitter(rng_family, (past_steps,)),
            first_step_index=1,
        )
        past[:, 1:] = past_positions.transpose(1, 0, 2)
    current = past[:, -1]

    rng_future = np.random.default_rng([config.seed, _STREAM_FUTURES])
    futures = np.empty((count, n, t_fut, 2))
    yaws = np.empty((count, n, t_fut))
    for k in range(count):
        positions, headings = _walk(
            config,
            current,
            base_heading,
            draw_deltas(rng_future, (t_fut,)),
            draw_jitter(rng_future, (t_fut,)),
            first_step_index=t_obs,
        )
        futures[k] = positions.transpose(1, 0, 2)
        yaws[k] = headings.T

    steps = np.arange(1, t_fut + 1, dtype=np.float64)
    truth = SceneTruth(
        rho=corr,
        mu_delta=np.outer(steps, np.full(n, config.base_speed)),
        sigma_delta=np.outer(np.sqrt(steps), np.full(n, config.noise_sigma)),
    )
    return past, futures, yaws, truth


def generate_scene(config: ScenarioConfig) -> Tuple[Scene, SceneTruth]:
    """One scene plus the ground truth it was sampled from.

    Deterministic given the config (including its seed).
    """
    past, futures, yaws, truth = _simulate(config, 1)
    return Scene(past=past, future=futures[0], yaw=yaws[0]), truth


def generate_scenes(config: ScenarioConfig, count: int) -> Tuple[List[Scene], SceneTruth]:
    """``count`` scenes sharing one past and ground truth, with
    independently sampled futures. Scene k equals scene k of any longer
    run with the same config."""
    past, futures, yaws, truth = _simulate(config, count)
    scenes = [Scene(past=past, future=futures[k], yaw=yaws[k]) for k in range(count)]
    return scenes, truth


def sample_future_positions(
    config: ScenarioConfig, count: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, SceneTruth]:
    """Fast path for Monte-Carlo work: (futures, yaws, current, truth).

    ``futures`` has shape (count, N, T, 2), ``yaws`` (count, N, T) and
    ``current`` (N, 2); future k matches scene k from
    :func:`generate_scenes`.
    """
    past, futures, yaws, truth = _simulate(config, count)
    return futures, yaws, past[:, -1], truth


def increments_from_positions(
    positions: np.ndarray, current: np.ndarray, theta: np.ndarray
) -> np.ndarray:
    """Signed 1-D displacement of each agent along its heading.

    ``positions`` is (..., N, 2); returns (..., N) projections of the
    displacement from ``current`` onto the heading unit vectors.
    """
    positions = np.asarray(positions, dtype=np.float64)
    current = np.asarray(current, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    unit = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    return np.sum((positions - current) * unit, axis=-1)


def empirical_increment_pcc(samples: np.ndarray) -> CorrelationMatrix:
    """Sample Pearson correlation of 1-D increments, one column per agent.

    The brute-force estimator used to validate reconstructed
    correlations; kept deliberately plain.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] < 2:
        raise ValueError(f"expected (K >= 2, N) samples, got {samples.shape}")
    centered = samples - samples.mean(axis=0)
    scale = np.sqrt(np.sum(centered * centered, axis=0))
    if np.any(scale == 0.0):
        bad = int(np.flatnonzero(scale == 0.0)[0])
        raise ValueError(f"column {bad} has zero sample variance")
    normalized = centered / scale
    rho = np.clip(normalized.T @ normalized, -1.0, 1.0)
    np.fill_diagonal(rho, 1.0)
    return CorrelationMatrix(rho)


@dataclass
class YawErrorStats:
    """Distribution of heading-approximation errors, in degrees.

    The error compares each agent's actual per-step heading against the
    chord direction from the current position to the step's position.
    ``histogram`` counts errors in fixed 5-degree bins spanning +/-90
    degrees; errors outside that range contribute to the moments but not
    the counts. Stationary steps are skipped and tallied separately.
    """

    mean_deg: float
    std_deg: float
    histogram: np.ndarray
    bin_edges: np.ndarray = field(repr=False)
    n_measured: int = 0
    n_skipped: int = 0


def yaw_error_distribution(scenes: Iterable[Scene]) -> YawErrorStats:
    """Heading-approximation error statistics over a scene collection."""
    errors = []
    skipped = 0
    for scene in scenes:
        current = scene.current
        displacement = scene.future - current[:, None, :]
        stationary = (displacement[..., 0] == 0.0) & (displacement[..., 1] == 0.0)
        skipped += int(np.count_nonzero(stationary))
        estimated = np.arctan2(displacement[..., 1], displacement[..., 0])
        delta = wrap_angle(scene.yaw - estimated)
        errors.append(delta[~stationary])
    flat = np.concatenate(errors) if errors else np.empty(0)
    degrees = np.degrees(flat)
    bin_edges = np.arange(-90.0, 95.0, 5.0)
    histogram, _ = np.histogram(degrees, bins=bin_edges)
    mean = float(degrees.mean()) if degrees.size else float("nan")
    std = float(degrees.std()) if degrees.size else float("nan")
    return YawErrorStats(
        mean_deg=mean,
        std_deg=std,
        histogram=histogram,
        bin_edges=bin_edges,
        n_measured=int(degrees.size),
        n_skipped=skipped,
    )
