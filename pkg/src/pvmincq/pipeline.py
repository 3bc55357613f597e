"""MinCq, NN-MinCq and PV-MinCq: validate, then refit on the full data."""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass, replace

from pvmincq import mincq
from pvmincq.dataset import LabeledSample, UnlabeledSample
from pvmincq.mincq import MajorityVote
from pvmincq.pv import Matching, compute_matching, epsilon_quantiles
from pvmincq.selflabel import is_degenerate, nn_self_label, pv_self_label
from pvmincq.validation import (
    Cell,
    HyperGrid,
    ValidationFailed,
    ValidationReport,
    kfold_validate,
    pv_validate,
    reverse_validate,
)

LOG = logging.getLogger(__name__)

METHODS = ("mincq", "nn-mincq", "pv-mincq")


@dataclass
class TrainedModel:
    method: str
    vote: MajorityVote
    cell: Cell
    report: ValidationReport
    training_sample: LabeledSample
    matching: Matching | None = None
    degenerate: bool = False


def _refit(report: ValidationReport, fit: Callable[[Cell], MajorityVote]):
    """Refit with the chosen cell, falling back to the next best feasible one.

    A cell that was feasible on every fold can still have an unreachable
    margin on the full data.
    """
    candidates = sorted(
        (r for r in report.results if r.feasible),
        key=lambda r: (r.criterion, r.cell.index),
    )
    for result in candidates:
        try:
            return result.cell, fit(result.cell)
        except mincq.InfeasibleMargin as ex:
            LOG.warning(
                "%s: refit with cell %s failed (%s), trying the next one",
                report.method,
                result.cell.index,
                ex,
            )
    raise ValidationFailed(report)


def train_mincq(S: LabeledSample, grid: HyperGrid, seed: int) -> TrainedModel:
    """Source-only MinCq with voters on the source points."""
    report = kfold_validate(S, grid, seed)
    cell, vote = _refit(report, lambda c: mincq.learn(S, c.gamma, c.mu))
    return TrainedModel("mincq", vote, cell, report, S)


def nn_labeler(S: LabeledSample, T: UnlabeledSample, cell: Cell) -> LabeledSample:
    return nn_self_label(S, T, cell.k or 1)


def train_nn_mincq(
    S: LabeledSample,
    T: UnlabeledSample,
    grid: HyperGrid,
    seed: int,
) -> TrainedModel:
    """k-NN self-labeling of T, then MinCq on it; reverse-validated."""
    if not grid.neighbors:
        grid = replace(grid, neighbors=(1,))
    report = reverse_validate(S, T, grid, nn_labeler, seed, method="nn-mincq")
    labeled = {}

    def fit(cell: Cell) -> MajorityVote:
        labeled[cell.index] = nn_labeler(S, T, cell)
        return mincq.learn(labeled[cell.index], cell.gamma, cell.mu)

    cell, vote = _refit(report, fit)
    T_hat = labeled[cell.index]
    degenerate = is_degenerate(T_hat)
    if degenerate:
        LOG.warning(
            "nn-mincq: every target point got the label %+d (k=%s)",
            T_hat.labels[0],
            cell.k,
        )
    return TrainedModel("nn-mincq", vote, cell, report, T_hat, degenerate=degenerate)


def resolve_grid(
    S: LabeledSample,
    T: UnlabeledSample,
    grid: HyperGrid,
    epsilon_quantile_levels=None,
) -> HyperGrid:
    """Fill in absolute radii from quantiles of the source-target distances."""
    if grid.epsilons or not epsilon_quantile_levels:
        return grid
    radii = epsilon_quantiles(S.points, T.points, list(epsilon_quantile_levels))
    radii = tuple(sorted({r for r in radii if r > 0}))
    LOG.debug("eps grid from quantiles %s: %s", epsilon_quantile_levels, radii)
    return replace(grid, epsilons=radii)


def train_pv_mincq(
    S: LabeledSample,
    T: UnlabeledSample,
    grid: HyperGrid,
    seed: int,
    reduced_source: bool = True,
    distance="euclidean",
    pairing: str = "closest",
) -> TrainedModel:
    """Match S and T, transfer labels over the matching, run MinCq on T^."""
    report = pv_validate(
        S, T, grid, seed, reduced_source=reduced_source, distance=distance, pairing=pairing
    )
    fitted = {}

    def fit(cell: Cell) -> MajorityVote:
        matching = compute_matching(S.points, T.points, cell.eps, distance, pairing)
        T_hat = pv_self_label(S, T, matching)
        fitted[cell.index] = (matching, T_hat)
        return mincq.learn(T_hat, cell.gamma, cell.mu)

    cell, vote = _refit(report, fit)
    matching, T_hat = fitted[cell.index]
    return TrainedModel("pv-mincq", vote, cell, report, T_hat, matching=matching)


def validate(
    method: str,
    S: LabeledSample,
    T: UnlabeledSample,
    grid: HyperGrid,
    seed: int,
    reduced_source: bool = True,
    pairing: str = "closest",
) -> ValidationReport:
    """Only the selection step of `method`, without the final refit."""
    if method == "mincq":
        return kfold_validate(S, grid, seed)
    if method == "nn-mincq":
        if not grid.neighbors:
            grid = replace(grid, neighbors=(1,))
        return reverse_validate(S, T, grid, nn_labeler, seed, method="nn-mincq")
    if method == "pv-mincq":
        return pv_validate(S, T, grid, seed, reduced_source=reduced_source, pairing=pairing)
    raise ValueError(f"unknown method {method!r}, expected one of {METHODS}")


def train(
    method: str,
    S: LabeledSample,
    T: UnlabeledSample,
    grid: HyperGrid,
    seed: int,
    reduced_source: bool = True,
    pairing: str = "closest",
) -> TrainedModel:
    if method == "mincq":
        return train_mincq(S, grid, seed)
    if method == "nn-mincq":
        return train_nn_mincq(S, T, grid, seed)
    if method == "pv-mincq":
        return train_pv_mincq(S, T, grid, seed, reduced_source=reduced_source, pairing=pairing)
    raise ValueError(f"unknown method {method!r}, expected one of {METHODS}")
