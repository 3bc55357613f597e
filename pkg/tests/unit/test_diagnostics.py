import math

import numpy as np
import pytest

from pvmincq import diagnostics
from pvmincq.dataset import LabeledSample, ShiftSpec, UnlabeledSample, apply_shift, generate_moons
from pvmincq.diagnostics import DiagnosticViolation, diagnose
from pvmincq.mincq import MajorityVote, Posterior
from pvmincq.pv import Matching, compute_matching
from pvmincq.selflabel import EmptySelfLabel
from pvmincq.voters import VoterSet


def random_vote(rng, anchors):
    n = len(anchors)
    return MajorityVote(VoterSet(anchors, 1.5), Posterior(rng.uniform(0.0, 1.0 / n, size=n)))


def test_identity_matching_has_no_gap():
    rng = np.random.default_rng(0)
    S = generate_moons(15, 15, 0.05, 1)
    vote = random_vote(rng, S.points[:10])
    identity = Matching([(i, i) for i in range(30)], eps=0.1, m_s=30, m_t=30)

    report = diagnose(vote, S, S.unlabeled(), identity)
    assert report.eps_hat == 0.0
    assert report.gibbs_gap == 0.0
    assert report.dis_hat == 0.0
    assert report.pv == 0.0
    assert report.matched == 30


def test_single_pair_single_voter():
    voters = VoterSet([[0.0, 0.0]], 1.0)
    vote = MajorityVote(voters, Posterior([1.0]))
    S = LabeledSample([[0.2, 0.0]], [1])
    T = UnlabeledSample([[0.0, 0.4]])
    matching = Matching([(0, 0)], eps=1.0, m_s=1, m_t=1)

    h_s, h_t = math.exp(-0.04), math.exp(-0.16)
    report = diagnose(vote, S, T, matching)
    # one voter with rho = 1: the score is h itself
    assert report.eps_hat == pytest.approx(abs(h_s - h_t))
    assert report.gibbs_source == pytest.approx(0.5 * (1 - h_s))
    assert report.gibbs_target == pytest.approx(0.5 * (1 - h_t))
    assert report.gibbs_gap == pytest.approx(0.5 * abs(h_s - h_t))
    assert report.dis_hat == pytest.approx(abs(h_t**2 - h_s**2))
    assert report.mean_abs_score == pytest.approx(h_t)
    assert report.dis_bound == pytest.approx(report.eps_hat**2 + 2 * report.eps_hat * h_t)


@pytest.mark.parametrize("angle", [20, 50, 80])
def test_bounds_hold_for_any_vote(angle):
    rng = np.random.default_rng(angle)
    S = generate_moons(30, 30, 0.05, 2)
    T = apply_shift(generate_moons(30, 30, 0.05, 3), ShiftSpec.rotation(angle), S.centroid())
    matching = compute_matching(S.points, T.points, 0.4)
    vote = random_vote(rng, T.points[:20])

    report = diagnose(vote, S, T.unlabeled(), matching)
    assert report.gibbs_gap <= 0.5 * report.eps_hat + 1e-12
    assert report.dis_hat <= report.dis_bound + 1e-12
    # Gaussian voters take values in (0, 1]
    assert report.eps_hat <= 1.0
    assert report.dis_bound_simplified is not None
    assert report.dis_hat <= report.dis_bound_simplified + 1e-12


def test_violation_is_raised(monkeypatch):
    rng = np.random.default_rng(4)
    S = generate_moons(10, 10, 0.05, 5)
    T = apply_shift(S, ShiftSpec.rotation(30))
    matching = compute_matching(S.points, T.points, 0.5)
    vote = random_vote(rng, S.points)
    monkeypatch.setattr(diagnostics, "epsilon_H", lambda *args: 0.0)

    with pytest.raises(DiagnosticViolation):
        diagnose(vote, S, T.unlabeled(), matching)


def test_empty_matching():
    S = LabeledSample([[0.0, 0.0]], [1])
    vote = MajorityVote(VoterSet(S.points, 1.0), Posterior([0.5]))

    with pytest.raises(EmptySelfLabel):
        diagnose(vote, S, S.unlabeled(), Matching(np.zeros((0, 2)), 0.1, 1, 1))


def test_report_serializes():
    rng = np.random.default_rng(6)
    S = generate_moons(10, 10, 0.05, 7)
    vote = random_vote(rng, S.points[:4])
    matching = compute_matching(S.points, S.points, 0.1)

    data = diagnose(vote, S, S.unlabeled(), matching).to_dict()
    assert set(data) == {
        "eps_hat",
        "gibbs_source",
        "gibbs_target",
        "gibbs_gap",
        "dis_hat",
        "dis_bound",
        "dis_bound_simplified",
        "mean_abs_score",
        "pv",
        "matched",
    }
