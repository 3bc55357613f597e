"""Gaussian-kernel voters anchored at sample points."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy.spatial.distance import cdist

from pvmincq.utils import PVMinCqError

# Kernel values are floored here so a voter output never underflows to 0.
KERNEL_FLOOR = np.finfo(float).tiny


class DimensionMismatch(PVMinCqError, ValueError):
    pass


class Voters(Protocol):
    """Any finite family of bounded real-valued voters."""

    @property
    def n(self) -> int: ...

    def evaluate(self, points) -> np.ndarray:
        """Return the (len(points), n) matrix of voter outputs."""
        ...


def _points_2d(points, dim: int) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise DimensionMismatch(
            f"points of shape {arr.shape} do not match voters of dimension {dim}"
        )
    return arr


@dataclass(frozen=True, eq=False)
class VoterSet:
    """h_j(x) = exp(-gamma * ||x - anchor_j||^2)."""

    anchors: np.ndarray
    gamma: float

    def __post_init__(self):
        anchors = np.array(self.anchors, dtype=float)
        if anchors.ndim != 2 or anchors.shape[0] == 0:
            raise ValueError("a voter set needs at least one anchor")
        if not np.all(np.isfinite(anchors)):
            raise ValueError("anchors must be finite")
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError(f"gamma must be finite and > 0, got {self.gamma}")
        anchors.setflags(write=False)
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n(self) -> int:
        return self.anchors.shape[0]

    @property
    def dim(self) -> int:
        return self.anchors.shape[1]

    def evaluate(self, points) -> np.ndarray:
        points = _points_2d(points, self.dim)
        sq_dist = cdist(points, self.anchors, metric="sqeuclidean")
        return np.maximum(np.exp(-self.gamma * sq_dist), KERNEL_FLOOR)


def build_from_sample(points, gamma: float) -> VoterSet:
    """One Gaussian voter per point of `points` (an array or a sample)."""
    points = getattr(points, "points", points)
    return VoterSet(points, gamma)


def evaluate_matrix(voters: Voters, points) -> np.ndarray:
    """H[s][j] = h_j(x_s)."""
    points = getattr(points, "points", points)
    return voters.evaluate(points)
