"""Empirical risks, margin moments and the C-bound family.

All moments use the signed weights w_j = 2 rho_j - 1/n of the vote, i.e.
the posterior over the voters together with their negations: rho_j on
h_j and 1/n - rho_j on -h_j. That posterior already sums to one, so

    first  = mean_x  y * sum_j w_j h_j(x)
    second = mean_x  (sum_j w_j h_j(x))^2  =  w' Gram w
"""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import asdict, dataclass

import numpy as np

from pvmincq.dataset import LabeledSample
from pvmincq.mincq import MajorityVote
from pvmincq.utils import PVMinCqError

LOG = logging.getLogger(__name__)

FACTOR2_SLACK = 1e-12


class CBoundUndefined(PVMinCqError, ValueError):
    def __init__(self, first: float):
        self.first = first
        super().__init__(f"the C-bound needs a positive first margin moment, got {first:.6g}")


@dataclass(frozen=True)
class MarginMoments:
    first: float
    second: float


def _points(sample_or_points) -> np.ndarray:
    return np.asarray(getattr(sample_or_points, "points", sample_or_points), dtype=float)


def margin_moments(vote: MajorityVote, points, labels) -> MarginMoments:
    scores = vote.score(_points(points))
    labels = np.asarray(labels, dtype=float)
    return MarginMoments(
        first=float(np.mean(labels * scores)),
        second=float(np.mean(scores**2)),
    )


def gibbs_risk(vote: MajorityVote, sample: LabeledSample) -> float:
    first = margin_moments(vote, sample.points, sample.labels).first
    return 0.5 * (1.0 - first)


def _error_rate(scores: np.ndarray, labels) -> float:
    # a zero score is an error whatever the label
    return float(np.mean(np.asarray(labels) * scores <= 0))


def bayes_risk(vote: MajorityVote, sample: LabeledSample) -> float:
    return _error_rate(vote.score(sample.points), sample.labels)


def accuracy(vote: MajorityVote, sample: LabeledSample) -> float:
    return 1.0 - bayes_risk(vote, sample)


def cbound(moments: MarginMoments) -> float:
    """1 - first^2 / second, for a positive first moment."""
    if not moments.first > 0:
        raise CBoundUndefined(moments.first)
    return 1.0 - moments.first**2 / moments.second


def _cbound_or_none(moments: MarginMoments) -> float | None:
    try:
        return cbound(moments)
    except CBoundUndefined:
        return None


def domain_disagreement(vote: MajorityVote, S_points, T_points) -> float:
    """|second moment on T - second moment on S|."""
    second_s = np.mean(vote.score(_points(S_points)) ** 2)
    second_t = np.mean(vote.score(_points(T_points)) ** 2)
    return float(abs(second_t - second_s))


def factor2_check(vote: MajorityVote, sample: LabeledSample) -> tuple[float, float, bool]:
    bayes = bayes_risk(vote, sample)
    gibbs = gibbs_risk(vote, sample)
    holds = bayes <= 2.0 * gibbs + FACTOR2_SLACK
    if not holds:
        LOG.warning("Bayes risk %.6g exceeds twice the Gibbs risk %.6g", bayes, gibbs)
    return bayes, gibbs, holds


@dataclass(frozen=True)
class BoundReport:
    gibbs_risk: float
    bayes_risk: float
    cbound: float | None
    label_divergence: float = 0.0
    corollary_bound: float | None = None
    domain_disagreement: float | None = None
    self_label_risk: float | None = None
    self_label_cbound: float | None = None
    label_disagreement: float = 0.0
    corrected_bound: float | None = None
    identity_gap: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def bound_report(vote: MajorityVote, sample: LabeledSample, other_points=None) -> BoundReport:
    """Risks and the C-bound of `vote` on `sample`.

    With `other_points`, the domain disagreement between the sample and
    those points is filled in too.
    """
    moments = margin_moments(vote, sample.points, sample.labels)
    return BoundReport(
        gibbs_risk=0.5 * (1.0 - moments.first),
        bayes_risk=bayes_risk(vote, sample),
        cbound=_cbound_or_none(moments),
        domain_disagreement=(
            None
            if other_points is None
            else domain_disagreement(vote, sample.points, other_points)
        ),
    )


def corollary_bound(
    vote: MajorityVote,
    target: LabeledSample,
    labeler: Callable[[np.ndarray], np.ndarray],
) -> BoundReport:
    """C-bound under a self-labeling `labeler`, checked against true labels.

    `label_divergence` is 1/2 |mean(y - l)| and `corollary_bound` adds it to
    the C-bound computed with l in place of y. On a finite sample the risk
    gap is exactly 1/2 mean((l - y) * B0), B0 the vote sign (0 on a zero
    score); `identity_gap` is the numerical distance to that identity. The
    gap is at most the fraction of points where l and y differ
    (`label_disagreement`), so `corrected_bound` always bounds the true
    risk while `corollary_bound` need not.
    """
    points = target.points
    y = target.labels.astype(float)
    labels = np.asarray(labeler(points), dtype=float).reshape(-1)
    if labels.shape != y.shape:
        raise ValueError(f"labeler returned {labels.shape[0]} labels for {y.shape[0]} points")

    scores = vote.score(points)
    self_moments = margin_moments(vote, points, labels)
    self_cbound = cbound(self_moments)
    true_moments = margin_moments(vote, points, y)

    risk_true = _error_rate(scores, y)
    risk_self = _error_rate(scores, labels)
    predicted_gap = 0.5 * float(np.mean((labels - y) * np.sign(scores)))
    label_divergence = 0.5 * abs(float(np.mean(y - labels)))
    label_disagreement = float(np.mean(y != labels))

    return BoundReport(
        gibbs_risk=0.5 * (1.0 - true_moments.first),
        bayes_risk=risk_true,
        cbound=_cbound_or_none(true_moments),
        label_divergence=label_divergence,
        corollary_bound=self_cbound + label_divergence,
        self_label_risk=risk_self,
        self_label_cbound=self_cbound,
        label_disagreement=label_disagreement,
        corrected_bound=self_cbound + label_disagreement,
        identity_gap=abs((risk_true - risk_self) - predicted_gap),
    )
