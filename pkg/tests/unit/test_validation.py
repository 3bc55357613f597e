import math

import numpy as np
import pytest

from pvmincq import metrics, mincq
from pvmincq.dataset import LabeledSample, ShiftSpec, apply_shift, generate_moons
from pvmincq.pipeline import nn_labeler
from pvmincq.pv import epsilon_quantiles
from pvmincq.validation import (
    Cell,
    CellResult,
    HyperGrid,
    ValidationFailed,
    ValidationReport,
    kfold_validate,
    pv_validate,
    reverse_validate,
    stratified_folds,
)


@pytest.fixture(scope="module")
def task():
    S = generate_moons(20, 20, 0.05, 11)
    T = apply_shift(generate_moons(20, 20, 0.05, 12), ShiftSpec.rotation(20), S.centroid())
    return S, T.unlabeled()


class TestHyperGrid:
    def test_cell_order(self):
        grid = HyperGrid(mus=(0.1, 0.2), gammas=(1.0, 2.0), epsilons=(0.3, 0.6))

        cells = grid.cells()
        assert [c.index for c in cells] == list(range(8))
        assert [(c.eps, c.gamma, c.mu) for c in cells[:4]] == [
            (0.3, 1.0, 0.1),
            (0.3, 1.0, 0.2),
            (0.3, 2.0, 0.1),
            (0.3, 2.0, 0.2),
        ]
        assert cells[4].eps == 0.6

    def test_neighbors_grid(self):
        grid = HyperGrid(mus=(0.1,), gammas=(1.0,), neighbors=(3, 5))

        assert [(c.k, c.eps) for c in grid.cells()] == [(3, None), (5, None)]

    def test_plain_grid(self):
        cells = HyperGrid(mus=(0.1, 0.2), gammas=(1.0,)).cells()

        assert cells == [Cell(0, 0.1, 1.0), Cell(1, 0.2, 1.0)]

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"mus": ()},
            {"mus": (0.0,)},
            {"gammas": (-1.0,)},
            {"epsilons": (math.inf,)},
            {"neighbors": (0,)},
            {"k_folds": 1},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            HyperGrid(**kwargs)


def test_stratified_folds():
    labels = np.array([1] * 12 + [-1] * 8)

    folds = stratified_folds(labels, 4, seed=3)
    assert len(folds) == 4
    held_out = np.sort(np.concatenate([test for _, test in folds]))
    np.testing.assert_array_equal(held_out, np.arange(20))
    for train, test in folds:
        assert set(labels[test]) == {1, -1}
        assert not set(train) & set(test)

    again = stratified_folds(labels, 4, seed=3)
    for (a, b), (c, d) in zip(folds, again):
        np.testing.assert_array_equal(a, c)
        np.testing.assert_array_equal(b, d)


class TestReport:
    def make(self, criteria):
        results = []
        for index, value in enumerate(criteria):
            result = CellResult(Cell(index, 0.1, 1.0))
            if value is None:
                result.mark_infeasible("mu=0.1 infeasible")
            else:
                result.fold_risks = [value]
            results.append(result)
        return ValidationReport("test", results)

    def test_lowest_criterion_wins(self):
        report = self.make([0.3, 0.1, None, 0.2]).choose()

        assert report.chosen_index == 1
        assert report.chosen.criterion == pytest.approx(0.1)

    def test_ties_go_to_the_first_cell(self):
        assert self.make([0.2, 0.1, 0.1]).choose().chosen_index == 1

    def test_nothing_feasible(self):
        with pytest.raises(ValidationFailed, match="infeasible"):
            self.make([None, None]).choose()

    def test_infeasible_criterion(self):
        result = CellResult(Cell(0, 0.1, 1.0), fold_risks=[0.1], pv=0.2)
        assert result.criterion == pytest.approx(0.3)

        result.mark_infeasible("empty matching")
        assert result.criterion == math.inf
        assert result.reason == "empty matching"

    def test_frame(self):
        frame = self.make([0.3, None, 0.1]).choose().to_frame()

        assert list(frame["chosen"]) == [False, False, True]
        assert list(frame["feasible"]) == [True, False, True]
        assert math.isnan(frame["criterion"][1])


class TestPVValidate:
    def test_report(self, task):
        S, T = task
        radii = epsilon_quantiles(S.points, T.points, [0.1, 0.25])
        grid = HyperGrid(mus=(1e-3,), gammas=(1.0, 2.0), epsilons=radii, k_folds=3)

        report = pv_validate(S, T, grid, seed=0)
        assert report.method == "pv-mincq"
        assert len(report.results) == 4
        assert report.chosen.feasible
        # one PV per radius, non-increasing with it
        pvs = [r.pv for r in report.results]
        assert pvs[0] == pvs[1]
        assert pvs[2] == pvs[3]
        assert pvs[0] >= pvs[2]
        for result in report.results:
            if result.feasible:
                assert len(result.fold_risks) == 3
                assert result.criterion == pytest.approx(result.source_risk + result.pv)

    def test_full_source_matching(self, task):
        S, T = task
        radii = epsilon_quantiles(S.points, T.points, [0.25])
        grid = HyperGrid(mus=(1e-3,), gammas=(1.0,), epsilons=radii, k_folds=3)

        reduced = pv_validate(S, T, grid, seed=0)
        full = pv_validate(S, T, grid, seed=0, reduced_source=False)
        assert reduced.results[0].pv == full.results[0].pv

    def test_tiny_radius_is_infeasible(self, task):
        S, T = task
        grid = HyperGrid(mus=(1e-3,), gammas=(1.0,), epsilons=(1e-9,), k_folds=3)

        with pytest.raises(ValidationFailed, match="empty matching"):
            pv_validate(S, T, grid, seed=0)

    def test_needs_radii(self, task):
        S, T = task

        with pytest.raises(ValueError):
            pv_validate(S, T, HyperGrid(), seed=0)

    def test_deterministic(self, task):
        S, T = task
        radii = epsilon_quantiles(S.points, T.points, [0.25])
        grid = HyperGrid(mus=(1e-3, 1e-2), gammas=(1.0,), epsilons=radii, k_folds=3)

        first = pv_validate(S, T, grid, seed=5).to_frame()
        second = pv_validate(S, T, grid, seed=5).to_frame()
        assert first.equals(second)

    def test_a_radius_that_leaves_most_points_unmatched_loses(self, task):
        S, T = task
        radii = epsilon_quantiles(S.points, T.points, [0.02, 0.5])
        grid = HyperGrid(mus=(1e-3,), gammas=(2.0,), epsilons=radii, k_folds=3)

        report = pv_validate(S, T, grid, seed=0)
        narrow, wide = report.results
        assert narrow.pv > wide.pv + 0.2
        assert report.chosen.cell.eps == radii[1]
        assert narrow.criterion > wide.criterion

    def test_pairings_share_the_pv(self, task):
        S, T = task
        radii = epsilon_quantiles(S.points, T.points, [0.25])
        grid = HyperGrid(mus=(1e-3,), gammas=(1.0,), epsilons=radii, k_folds=3)

        first = pv_validate(S, T, grid, seed=0, pairing="first")
        closest = pv_validate(S, T, grid, seed=0, pairing="closest")
        assert first.results[0].pv == closest.results[0].pv


class TestKFoldValidate:
    def test_report(self, task):
        S, _ = task
        grid = HyperGrid(mus=(1e-3, 1e-2), gammas=(1.0,), epsilons=(0.5,), k_folds=4)

        report = kfold_validate(S, grid, seed=0)
        assert report.method == "mincq"
        # the radius plays no role without a target sample
        assert len(report.results) == 2
        assert all(r.cell.eps is None for r in report.results)
        assert all(r.pv == 0.0 for r in report.results)
        assert report.chosen.source_risk <= 0.5

    def test_unreachable_margin(self, task):
        S, _ = task
        grid = HyperGrid(mus=(10.0,), gammas=(1.0,), k_folds=2)

        with pytest.raises(ValidationFailed, match="infeasible") as excinfo:
            kfold_validate(S, grid, seed=0)
        assert not excinfo.value.report.results[0].feasible

    def test_separating_gamma_is_chosen(self, task):
        S, _ = task
        grid = HyperGrid(mus=(1e-3,), gammas=(0.001, 5.0), k_folds=4)

        report = kfold_validate(S, grid, seed=0)
        assert report.chosen.cell.gamma == 5.0
        assert report.chosen.source_risk <= 0.1

    def test_paths_match_single_fits(self, task):
        S, _ = task
        grid = HyperGrid(mus=(1e-3, 1e-2), gammas=(2.0,), k_folds=3)

        report = kfold_validate(S, grid, seed=1)
        for result in report.results:
            expected = [
                metrics.bayes_risk(
                    mincq.learn(S.subset(train), result.cell.gamma, result.cell.mu),
                    S.subset(test),
                )
                for train, test in stratified_folds(S.labels, 3, seed=1)
            ]
            assert result.fold_risks == pytest.approx(expected)


class TestReverseValidate:
    def test_report(self, task):
        S, T = task
        grid = HyperGrid(mus=(1e-3,), gammas=(1.0,), neighbors=(1, 3), k_folds=3)

        report = reverse_validate(S, T, grid, nn_labeler, seed=0, method="nn-mincq")
        assert report.method == "nn-mincq"
        assert [r.cell.k for r in report.results] == [1, 3]
        assert report.chosen.feasible
        assert all(len(r.fold_risks) == 3 for r in report.results if r.feasible)

    def test_constant_labeler_scores_one_half(self, task):
        S, _ = task

        def always_positive(train, T, cell):
            return LabeledSample(T.points, np.ones(len(T), dtype=int))

        grid = HyperGrid(mus=(1e-3,), gammas=(1.0,), neighbors=(1,), k_folds=4)
        report = reverse_validate(S, S.unlabeled(), grid, always_positive, seed=0)
        assert report.chosen.criterion == pytest.approx(0.5, abs=0.1)

    def test_perfect_labeler_on_the_source_itself(self, task):
        S, _ = task

        def truth(train, T, cell):
            return S

        grid = HyperGrid(mus=(1e-2,), gammas=(2.0,), neighbors=(1,), k_folds=4)
        reverse = reverse_validate(S, S.unlabeled(), grid, truth, seed=0)
        direct = kfold_validate(S, grid, seed=0)
        assert reverse.chosen.source_risk == pytest.approx(direct.chosen.source_risk, abs=0.1)

    def test_labeler_runs_once_per_fold_and_gamma(self, task):
        S, T = task
        calls = []

        def counting(train, T, cell):
            calls.append(cell)
            return nn_labeler(train, T, cell)

        grid = HyperGrid(mus=(1e-3, 1e-2), gammas=(1.0, 2.0), neighbors=(3,), k_folds=3)
        reverse_validate(S, T, grid, counting, seed=0)
        assert len(calls) == 3 * 2
