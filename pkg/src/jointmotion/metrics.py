"""Joint multi-agent displacement metrics.

Both metrics take the minimum over one shared mode index for the whole
scene (joint), never the best mode per agent; that distinction is what
separates them from the ego-motion variants. Ties break toward the
lowest mode index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .scene import ModeSet


@dataclass(frozen=True)
class MetricResult:
    """A metric value in meters and the mode index achieving it."""

    value: float
    argmin_mode: int


def _mode_array(pred: Union[ModeSet, np.ndarray], gt: np.ndarray):
    modes = pred.modes if isinstance(pred, ModeSet) else np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if modes.ndim != 4 or modes.shape[3] != 2:
        raise ValueError(f"modes: expected (M, N, T, 2), got {modes.shape}")
    if gt.shape != modes.shape[1:]:
        raise ValueError(
            f"ground truth shape {gt.shape} does not match modes {modes.shape[1:]}"
        )
    return modes, gt


def min_joint_ade(pred: Union[ModeSet, np.ndarray], gt: np.ndarray) -> MetricResult:
    """Minimum over modes of the displacement error averaged over all
    agents and steps."""
    modes, gt = _mode_array(pred, gt)
    distances = np.linalg.norm(modes - gt[None], axis=-1)
    per_mode = distances.mean(axis=(1, 2))
    best = int(np.argmin(per_mode))
    return MetricResult(value=float(per_mode[best]), argmin_mode=best)


def min_joint_fde(pred: Union[ModeSet, np.ndarray], gt: np.ndarray) -> MetricResult:
    """Minimum over modes of the final-step displacement error averaged
    over all agents."""
    modes, gt = _mode_array(pred, gt)
    distances = np.linalg.norm(modes[:, :, -1, :] - gt[None, :, -1, :], axis=-1)
    per_mode = distances.mean(axis=1)
    best = int(np.argmin(per_mode))
    return MetricResult(value=float(per_mode[best]), argmin_mode=best)
