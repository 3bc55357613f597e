"""Certified comparison of a vote on the matched source and target points.

For the matched subsamples S^ (true source labels) and T^ (transferred
labels) and eps_hat the largest voter deviation over matched pairs:

    |R_T^(G) - R_S^(G)|  <=  eps_hat / 2
    dis(S^, T^)          <=  eps_hat^2 + 2 eps_hat mean_T^ |score|

Both follow from the measured eps_hat, so a violation is a bug.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from pvmincq import metrics
from pvmincq.dataset import LabeledSample, UnlabeledSample
from pvmincq.mincq import MajorityVote
from pvmincq.pv import Matching
from pvmincq.selflabel import EmptySelfLabel, epsilon_H
from pvmincq.utils import PVMinCqError

LOG = logging.getLogger(__name__)

TOLERANCE = 1e-12


class DiagnosticViolation(PVMinCqError, AssertionError):
    pass


@dataclass(frozen=True)
class AdaptationDiagnostics:
    eps_hat: float
    gibbs_source: float
    gibbs_target: float
    gibbs_gap: float
    dis_hat: float
    dis_bound: float
    dis_bound_simplified: float | None
    mean_abs_score: float
    pv: float
    matched: int

    def to_dict(self) -> dict:
        return asdict(self)


def diagnose(
    vote: MajorityVote,
    S: LabeledSample,
    T: UnlabeledSample,
    matching: Matching,
) -> AdaptationDiagnostics:
    if len(matching) == 0:
        raise EmptySelfLabel("diagnostics need at least one matched pair")
    sources = matching.source_indices
    targets = matching.target_indices
    S_hat = S.subset(sources)
    T_hat = LabeledSample(T.points[targets], S.labels[sources])

    eps_hat = epsilon_H(vote.voters, matching, S.points, T.points)
    gibbs_source = metrics.gibbs_risk(vote, S_hat)
    gibbs_target = metrics.gibbs_risk(vote, T_hat)
    gibbs_gap = abs(gibbs_target - gibbs_source)
    dis_hat = metrics.domain_disagreement(vote, S_hat.points, T_hat.points)
    mean_abs_score = float(np.mean(np.abs(vote.score(T_hat.points))))
    dis_bound = eps_hat**2 + 2.0 * eps_hat * mean_abs_score
    dis_bound_simplified = (
        eps_hat * (1.0 + 2.0 * mean_abs_score) if eps_hat <= 1.0 else None
    )

    report = AdaptationDiagnostics(
        eps_hat=eps_hat,
        gibbs_source=gibbs_source,
        gibbs_target=gibbs_target,
        gibbs_gap=gibbs_gap,
        dis_hat=dis_hat,
        dis_bound=dis_bound,
        dis_bound_simplified=dis_bound_simplified,
        mean_abs_score=mean_abs_score,
        pv=matching.pv,
        matched=len(matching),
    )
    LOG.debug("adaptation diagnostics: %s", report)

    if gibbs_gap > 0.5 * eps_hat + TOLERANCE:
        raise DiagnosticViolation(
            f"Gibbs risk gap {gibbs_gap:.6g} exceeds eps_hat/2 = {0.5 * eps_hat:.6g}"
        )
    if dis_hat > dis_bound + TOLERANCE:
        raise DiagnosticViolation(
            f"disagreement {dis_hat:.6g} exceeds its bound {dis_bound:.6g}"
        )
    if dis_bound_simplified is not None and dis_hat > dis_bound_simplified + TOLERANCE:
        raise DiagnosticViolation(
            f"disagreement {dis_hat:.6g} exceeds eps_hat(1 + 2 E|score|) = "
            f"{dis_bound_simplified:.6g}"
        )
    return report
