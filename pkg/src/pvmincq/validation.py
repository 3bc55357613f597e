"""Hyperparameter selection for the three learners.

- `pv_validate`: k-fold source risk of PV-MinCq plus the PV of (S, T).
- `kfold_validate`: plain k-fold cross-validation of source-only MinCq.
- `reverse_validate`: reverse validation for a self-labeling learner.

Cells are enumerated in a fixed order and the report keeps that order;
the chosen cell is the feasible one with the lowest criterion, ties going
to the lowest index.
"""

from __future__ import annotations

import itertools
import logging
import math
from collections import defaultdict
from collections.abc import Callable
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from sklearn.model_selection import StratifiedKFold

from pvmincq import metrics, mincq
from pvmincq.dataset import LabeledSample, UnlabeledSample
from pvmincq.pv import compute_matching
from pvmincq.selflabel import pv_self_label
from pvmincq.utils import PVMinCqError
from pvmincq.voters import build_from_sample

LOG = logging.getLogger(__name__)

DEFAULT_MUS = (1e-4, 1e-3, 1e-2, 1e-1)
DEFAULT_GAMMAS = (0.1, 0.5, 1.0, 2.0, 5.0)
DEFAULT_EPSILON_QUANTILES = (0.05, 0.10, 0.25, 0.50)
DEFAULT_NEIGHBORS = (3, 5)
DEFAULT_K_FOLDS = 5


class ValidationFailed(PVMinCqError):
    def __init__(self, report: ValidationReport):
        self.report = report
        reasons = sorted({r.reason for r in report.results if r.reason})
        super().__init__(
            f"{report.method}: no feasible cell among {len(report.results)} ({'; '.join(reasons)})"
        )


def _positive(name: str, values) -> tuple:
    values = tuple(values)
    if not values:
        raise ValueError(f"{name} must not be empty")
    if not all(v > 0 and math.isfinite(v) for v in values):
        raise ValueError(f"{name} must be finite and > 0, got {values}")
    return values


@dataclass(frozen=True)
class Cell:
    index: int
    mu: float
    gamma: float
    eps: float | None = None
    k: int | None = None


@dataclass(frozen=True)
class HyperGrid:
    mus: tuple[float, ...] = DEFAULT_MUS
    gammas: tuple[float, ...] = DEFAULT_GAMMAS
    epsilons: tuple[float, ...] = ()
    neighbors: tuple[int, ...] = ()
    k_folds: int = DEFAULT_K_FOLDS

    def __post_init__(self):
        object.__setattr__(self, "mus", _positive("mus", self.mus))
        object.__setattr__(self, "gammas", _positive("gammas", self.gammas))
        if self.epsilons:
            object.__setattr__(self, "epsilons", _positive("epsilons", self.epsilons))
        if self.neighbors:
            object.__setattr__(
                self, "neighbors", tuple(int(k) for k in _positive("neighbors", self.neighbors))
            )
        if self.k_folds < 2:
            raise ValueError(f"k_folds must be >= 2, got {self.k_folds}")

    def cells(self) -> list[Cell]:
        """eps outermost (or k for k-NN grids), then gamma, then mu."""
        outer = [("eps", e) for e in self.epsilons] or [("k", k) for k in self.neighbors]
        outer = outer or [(None, None)]
        cells = []
        for (key, value), gamma, mu in itertools.product(outer, self.gammas, self.mus):
            extra = {key: value} if key else {}
            cells.append(Cell(index=len(cells), mu=mu, gamma=gamma, **extra))
        return cells


@dataclass
class CellResult:
    cell: Cell
    fold_risks: list[float] = field(default_factory=list)
    pv: float = 0.0
    feasible: bool = True
    reason: str = ""

    @property
    def source_risk(self) -> float:
        return float(np.mean(self.fold_risks)) if self.fold_risks else math.nan

    @property
    def criterion(self) -> float:
        return self.source_risk + self.pv if self.feasible else math.inf

    def mark_infeasible(self, reason: str) -> None:
        if self.feasible:
            LOG.debug("cell %s infeasible: %s", self.cell.index, reason)
        self.feasible = False
        self.reason = self.reason or reason

    def to_row(self) -> dict:
        row = asdict(self.cell)
        row.update(
            source_risk=self.source_risk,
            pv=self.pv,
            criterion=self.criterion if self.feasible else math.nan,
            feasible=self.feasible,
            reason=self.reason,
        )
        return row


@dataclass
class ValidationReport:
    method: str
    results: list[CellResult]
    chosen_index: int | None = None

    def choose(self) -> ValidationReport:
        best = None
        for result in self.results:
            if result.feasible and (best is None or result.criterion < best.criterion):
                best = result
        if best is None:
            raise ValidationFailed(self)
        self.chosen_index = best.cell.index
        LOG.debug(
            "%s: chose cell %s (%s) with criterion %.4f",
            self.method,
            best.cell.index,
            best.cell,
            best.criterion,
        )
        return self

    @property
    def chosen(self) -> CellResult:
        if self.chosen_index is None:
            raise ValueError("no cell chosen yet")
        return self.results[self.chosen_index]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([r.to_row() for r in self.results])
        frame["chosen"] = frame["index"] == self.chosen_index
        return frame

    def to_dict(self) -> dict:
        chosen = self.chosen.to_row() if self.chosen_index is not None else None
        return {
            "method": self.method,
            "cells": len(self.results),
            "feasible": sum(r.feasible for r in self.results),
            "chosen": chosen,
        }


def stratified_folds(labels, k: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    labels = np.asarray(labels)
    splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    return list(splitter.split(np.zeros((labels.size, 1)), labels))


def _paths(results: list[CellResult]) -> dict[tuple, list[CellResult]]:
    """Group cells that differ only in mu; each group is solved as one path."""
    groups = defaultdict(list)
    for result in results:
        cell = result.cell
        groups[(cell.eps, cell.k, cell.gamma)].append(result)
    return groups


def _fold_votes(train: LabeledSample, results: list[CellResult], H=None):
    """Learn the votes of every still feasible cell of one mu path.

    Returns (result, vote) pairs; cells whose margin fails are marked
    infeasible.
    """
    live = [r for r in results if r.feasible]
    if not live:
        return []
    path = mincq.learn_path(train, live[0].cell.gamma, [r.cell.mu for r in live], H=H)
    votes = []
    for result, outcome in zip(live, path):
        if isinstance(outcome, mincq.InfeasibleMargin):
            result.mark_infeasible(f"mu={result.cell.mu:g} infeasible: {outcome}")
        elif isinstance(outcome, mincq.SolverError):
            LOG.warning("cell %s: %s", result.cell.index, outcome)
            result.mark_infeasible(str(outcome))
        else:
            votes.append((result, outcome))
    return votes


def pv_validate(
    S: LabeledSample,
    T: UnlabeledSample,
    grid: HyperGrid,
    seed: int,
    reduced_source: bool = True,
    distance="euclidean",
    pairing: str = "closest",
) -> ValidationReport:
    """Score every (eps, gamma, mu) by mean held-out source risk + PV(S, T, eps).

    With `reduced_source` the training matching of each fold is rebuilt
    from the k-1 training folds; otherwise the full-S matching is reused.
    The PV term always comes from the full-S matching. `pairing` picks the
    maximum matching the labels travel over (see `compute_matching`).
    """
    if not grid.epsilons:
        raise ValueError("pv_validate needs a grid with epsilons")
    folds = stratified_folds(S.labels, grid.k_folds, seed)
    results = [CellResult(cell) for cell in grid.cells()]
    by_eps = defaultdict(list)
    for result in results:
        by_eps[result.cell.eps].append(result)

    for eps, eps_results in by_eps.items():
        full_matching = compute_matching(S.points, T.points, eps, distance, pairing)
        for result in eps_results:
            result.pv = full_matching.pv
        groups = _paths(eps_results).values()

        for fold, (train_idx, test_idx) in enumerate(folds):
            if reduced_source:
                source = S.subset(train_idx)
                matching = compute_matching(source.points, T.points, eps, distance, pairing)
            else:
                source, matching = S, full_matching
            if len(matching) == 0:
                for result in eps_results:
                    result.mark_infeasible(f"empty matching at eps={eps:.4g}")
                break
            T_hat = pv_self_label(source, T, matching)
            held_out = S.subset(test_idx)
            for group in groups:
                for result, vote in _fold_votes(T_hat, group):
                    result.fold_risks.append(metrics.bayes_risk(vote, held_out))
            LOG.debug("eps=%.4g fold %s: |T^|=%s", eps, fold, len(T_hat))

    return ValidationReport("pv-mincq", results).choose()


def kfold_validate(S: LabeledSample, grid: HyperGrid, seed: int) -> ValidationReport:
    """Plain k-fold CV of source-only MinCq over (gamma, mu); eps is ignored."""
    grid = HyperGrid(mus=grid.mus, gammas=grid.gammas, k_folds=grid.k_folds)
    folds = stratified_folds(S.labels, grid.k_folds, seed)
    results = [CellResult(cell) for cell in grid.cells()]
    groups = _paths(results).values()
    for train_idx, test_idx in folds:
        train, held_out = S.subset(train_idx), S.subset(test_idx)
        for group in groups:
            for result, vote in _fold_votes(train, group):
                result.fold_risks.append(metrics.bayes_risk(vote, held_out))
    return ValidationReport("mincq", results).choose()


Labeler = Callable[[LabeledSample, UnlabeledSample, Cell], LabeledSample]


def reverse_validate(
    S: LabeledSample,
    T: UnlabeledSample,
    grid: HyperGrid,
    labeler: Labeler,
    seed: int,
    method: str = "reverse",
) -> ValidationReport:
    """Reverse validation of a self-labeling learner.

    Per fold: self-label T from the training folds, learn a vote on it,
    relabel all of T with that vote, learn the reverse vote on the relabeled
    T with the same hyperparameters, and measure it on the held-out fold.
    The labeler is called once per fold and (k, gamma); it must not depend
    on mu.
    """
    grid = HyperGrid(
        mus=grid.mus,
        gammas=grid.gammas,
        neighbors=grid.neighbors,
        k_folds=grid.k_folds,
    )
    folds = stratified_folds(S.labels, grid.k_folds, seed)
    results = [CellResult(cell) for cell in grid.cells()]
    groups = _paths(results).values()
    # the reverse votes all sit on the points of T
    target_outputs = {
        gamma: build_from_sample(T, gamma).evaluate(T.points) for gamma in grid.gammas
    }
    for train_idx, test_idx in folds:
        train, held_out = S.subset(train_idx), S.subset(test_idx)
        for group in groups:
            live = [r for r in group if r.feasible]
            if not live:
                continue
            T_hat = labeler(train, T, live[0].cell)
            for result, vote in _fold_votes(T_hat, live):
                relabeled = LabeledSample(T.points, vote.predict(T.points))
                H = target_outputs[result.cell.gamma]
                for _, reverse in _fold_votes(relabeled, [result], H=H):
                    result.fold_risks.append(metrics.bayes_risk(reverse, held_out))
    return ValidationReport(method, results).choose()
