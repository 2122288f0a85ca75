"""Relevance head: maps per-agent latent features to a correlation matrix.

A single-head scaled dot-product attention layer over the N agents is
followed by a two-layer feature transform; pairwise cosine similarity of
the resulting rows yields a valid correlation matrix (symmetric, unit
diagonal, entries in [-1, 1]) by construction, since cosine similarities
form the Gram matrix of unit vectors.

The transform nonlinearity is tanh. A smooth activation keeps the
analytic gradients verifiable against central finite differences at
tight tolerances, which a kinked activation cannot guarantee.

Forward passes are pure given the parameters; the fitter owns the
parameters during optimization (single writer).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
import numpy as np

from .increments import CorrelationMatrix


class DegenerateFeatureError(ValueError):
    """A feature row has zero norm and admits no cosine similarity."""


@dataclass
class RelevanceHead:
    """Parameters of the attention + transform head.

    ``w_query``, ``w_key``, ``w_value`` are the (d, d) attention
    projections; ``w_hidden``/``b_hidden`` and ``w_out``/``b_out`` are
    the two affine transform layers.
    """

    w_query: np.ndarray
    w_key: np.ndarray
    w_value: np.ndarray
    w_hidden: np.ndarray
    b_hidden: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.w_query).shape[0]
        for field in fields(self):
            arr = np.asarray(getattr(self, field.name), dtype=np.float64)
            expected = (d,) if field.name.startswith("b_") else (d, d)
            if arr.shape != expected:
                raise ValueError(f"{field.name}: expected shape {expected}, got {arr.shape}")
            setattr(self, field.name, arr)

    @property
    def feature_dim(self) -> int:
        return self.w_query.shape[0]

    @classmethod
    def initialize(cls, feature_dim: int, seed: int) -> "RelevanceHead":
        """Seeded uniform init in [-1/sqrt(d), 1/sqrt(d)] (PCG64)."""
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(feature_dim)

        def draw(shape):
            return rng.uniform(-bound, bound, size=shape)

        d = feature_dim
        return cls(
            w_query=draw((d, d)),
            w_key=draw((d, d)),
            w_value=draw((d, d)),
            w_hidden=draw((d, d)),
            b_hidden=draw((d,)),
            w_out=draw((d, d)),
            b_out=draw((d,)),
        )

    @classmethod
    def zeros_like(cls, other: "RelevanceHead") -> "RelevanceHead":
        return cls(*(np.zeros_like(getattr(other, f.name)) for f in fields(other)))

    def pack(self) -> np.ndarray:
        """Flatten all parameters into one vector (fixed field order)."""
        return np.concatenate([getattr(self, f.name).ravel() for f in fields(self)])

    @classmethod
    def unpack(cls, vector: np.ndarray, feature_dim: int) -> "RelevanceHead":
        """Inverse of :meth:`pack`."""
        vector = np.asarray(vector, dtype=np.float64)
        d = feature_dim
        shapes = [(d, d), (d, d), (d, d), (d, d), (d,), (d, d), (d,)]
        if vector.shape != (sum(int(np.prod(s)) for s in shapes),):
            raise ValueError(f"parameter vector has wrong length {vector.shape}")
        parts = []
        offset = 0
        for shape in shapes:
            size = int(np.prod(shape))
            parts.append(vector[offset : offset + size].reshape(shape))
            offset += size
        return cls(*parts)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name).tolist() for f in fields(self)}

    @classmethod
    def from_dict(cls, payload: dict) -> "RelevanceHead":
        return cls(**{f.name: np.asarray(payload[f.name]) for f in fields(cls)})

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(self.to_dict(), handle, indent=2)
            handle.write("\n")

    @classmethod
    def load(cls, path) -> "RelevanceHead":
        with open(path, "r", encoding="utf-8") as handle:
            return cls.from_dict(json.load(handle))


def _forward_cached(features: np.ndarray, head: RelevanceHead):
    features = np.asarray(features, dtype=np.float64)
    d = head.feature_dim
    if features.ndim != 2 or features.shape[1] != d:
        raise ValueError(f"features: expected (N, {d}), got {features.shape}")
    if not np.all(np.isfinite(features)):
        raise ValueError("features contain non-finite values")
    q = features @ head.w_query
    k = features @ head.w_key
    v = features @ head.w_value
    scores = (q @ k.T) / np.sqrt(d)
    shifted = scores - scores.max(axis=1, keepdims=True)
    weights = np.exp(shifted)
    attn = weights / weights.sum(axis=1, keepdims=True)
    mixed = attn @ v
    pre = mixed @ head.w_hidden + head.b_hidden
    hidden = np.tanh(pre)
    out = hidden @ head.w_out + head.b_out
    cache = {
        "features": features,
        "q": q,
        "k": k,
        "v": v,
        "attn": attn,
        "mixed": mixed,
        "hidden": hidden,
        "out": out,
    }
    return out, cache


def attention_forward(features: np.ndarray, head: RelevanceHead) -> np.ndarray:
    """Relevance-aware features: attention over agents, then the transform.

    Deterministic, permutation-equivariant over agent rows. Returns an
    (N, d) array.
    """
    out, _ = _forward_cached(features, head)
    return out


def cosine_relevance(features: np.ndarray) -> CorrelationMatrix:
    """Pairwise cosine similarity of feature rows as a correlation matrix.

    The diagonal is forced to exactly 1; off-diagonal dust outside
    [-1, 1] from rounding is clipped.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 1:
        raise ValueError(f"features: expected (N, d), got {features.shape}")
    norms = np.linalg.norm(features, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms == 0.0)[0])
        raise DegenerateFeatureError(f"feature row {bad} has zero norm")
    unit = features / norms[:, None]
    rho = np.clip(unit @ unit.T, -1.0, 1.0)
    np.fill_diagonal(rho, 1.0)
    return CorrelationMatrix(rho)


def relevance_matrix(features: np.ndarray, head: RelevanceHead) -> CorrelationMatrix:
    """Full pipeline: attention + transform, then cosine similarity."""
    return cosine_relevance(attention_forward(features, head))


def relevance_forward_cached(features: np.ndarray, head: RelevanceHead):
    """Forward pass keeping intermediates for :func:`relevance_backward`.

    Returns (rho, cache) where ``rho`` is the raw (N, N) similarity
    matrix with unit diagonal.
    """
    out, cache = _forward_cached(features, head)
    norms = np.linalg.norm(out, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms == 0.0)[0])
        raise DegenerateFeatureError(f"feature row {bad} has zero norm")
    unit = out / norms[:, None]
    rho = unit @ unit.T
    np.fill_diagonal(rho, 1.0)
    cache["norms"] = norms
    cache["unit"] = unit
    return rho, cache


def relevance_backward(cache: dict, d_rho: np.ndarray, head: RelevanceHead) -> RelevanceHead:
    """Gradients of a scalar loss with respect to all head parameters.

    ``d_rho`` is the loss gradient with respect to the similarity
    matrix; its diagonal is ignored (the diagonal is pinned to 1).
    Returns the gradients packed in a :class:`RelevanceHead` container.
    """
    features = cache["features"]
    d = features.shape[1]
    d_rho = np.asarray(d_rho, dtype=np.float64).copy()
    np.fill_diagonal(d_rho, 0.0)

    unit = cache["unit"]
    norms = cache["norms"]
    d_unit = (d_rho + d_rho.T) @ unit
    d_out = (d_unit - np.sum(d_unit * unit, axis=1, keepdims=True) * unit) / norms[:, None]

    hidden = cache["hidden"]
    d_w_out = hidden.T @ d_out
    d_b_out = d_out.sum(axis=0)
    d_hidden = d_out @ head.w_out.T
    d_pre = d_hidden * (1.0 - hidden * hidden)
    d_w_hidden = cache["mixed"].T @ d_pre
    d_b_hidden = d_pre.sum(axis=0)
    d_mixed = d_pre @ head.w_hidden.T

    attn = cache["attn"]
    v = cache["v"]
    d_attn = d_mixed @ v.T
    d_v = attn.T @ d_mixed
    d_scores = attn * (d_attn - np.sum(d_attn * attn, axis=1, keepdims=True))
    scale = 1.0 / np.sqrt(d)
    d_q = d_scores @ cache["k"] * scale
    d_k = d_scores.T @ cache["q"] * scale

    return RelevanceHead(
        w_query=features.T @ d_q,
        w_key=features.T @ d_k,
        w_value=features.T @ d_v,
        w_hidden=d_w_hidden,
        b_hidden=d_b_hidden,
        w_out=d_w_out,
        b_out=d_b_out,
    )
