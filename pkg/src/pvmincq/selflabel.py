"""Self-labeling of the target sample: through the PV matching or by k-NN."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from pvmincq.dataset import LabeledSample, UnlabeledSample
from pvmincq.pv import Matching, pairwise_distances
from pvmincq.utils import PVMinCqError
from pvmincq.voters import Voters

LOG = logging.getLogger(__name__)


class EmptySelfLabel(PVMinCqError, ValueError):
    """The matching is empty, so there is nothing to learn from."""


@dataclass(frozen=True)
class SelfLabeledPair:
    target_point: tuple[float, ...]
    transferred_label: int
    source_index: int
    target_index: int


def _check_indices(matching: Matching, m_s: int, m_t: int) -> None:
    if matching.m_s != m_s or matching.m_t != m_t:
        raise ValueError(
            f"matching was built for ({matching.m_s}, {matching.m_t}) points, "
            f"got ({m_s}, {m_t})"
        )


def self_labeled_pairs(
    S: LabeledSample, T: UnlabeledSample, matching: Matching
) -> list[SelfLabeledPair]:
    _check_indices(matching, len(S), len(T))
    order = np.argsort(matching.target_indices, kind="stable")
    return [
        SelfLabeledPair(
            target_point=tuple(T.points[t]),
            transferred_label=int(S.labels[s]),
            source_index=int(s),
            target_index=int(t),
        )
        for s, t in matching.pairs[order]
    ]


def pv_self_label(S: LabeledSample, T: UnlabeledSample, matching: Matching) -> LabeledSample:
    """T^ = {(x_t, y_s) : (x_s, x_t) matched}; unmatched targets are dropped.

    Points come out in increasing target index order.
    """
    _check_indices(matching, len(S), len(T))
    if len(matching) == 0:
        raise EmptySelfLabel(f"no source point within eps={matching.eps:.4g} of any target point")
    order = np.argsort(matching.target_indices, kind="stable")
    sources = matching.source_indices[order]
    targets = matching.target_indices[order]
    LOG.debug(
        "self-labeled %s of %s target points (%s dropped)",
        targets.size,
        len(T),
        len(T) - targets.size,
    )
    return LabeledSample(T.points[targets], S.labels[sources])


def nn_self_label(S: LabeledSample, T: UnlabeledSample, k: int) -> LabeledSample:
    """Label every target point by majority over its k nearest source points.

    A tie (possible for even k) goes to the single nearest neighbor.
    """
    if not 1 <= k <= len(S):
        raise ValueError(f"k must be in [1, {len(S)}], got {k}")
    dist = pairwise_distances(T.points, S.points)
    nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
    neighbor_labels = S.labels[nearest]
    votes = neighbor_labels.sum(axis=1)
    labels = np.where(votes > 0, 1, np.where(votes < 0, -1, neighbor_labels[:, 0]))
    return LabeledSample(T.points, labels)


def is_degenerate(sample: LabeledSample) -> bool:
    """True when every self-label is the same."""
    return bool(np.all(sample.labels == sample.labels[0]))


def epsilon_H(voters: Voters, matching: Matching, S_points, T_points) -> float:
    """max over matched pairs and voters of |h(x_s) - h(x_t)|."""
    if len(matching) == 0:
        raise EmptySelfLabel("epsilon(H) is undefined on an empty matching")
    S_points = np.asarray(getattr(S_points, "points", S_points), dtype=float)
    T_points = np.asarray(getattr(T_points, "points", T_points), dtype=float)
    H_s = voters.evaluate(S_points[matching.source_indices])
    H_t = voters.evaluate(T_points[matching.target_indices])
    return float(np.max(np.abs(H_s - H_t)))
