"""The inter-twinning moons benchmark: configuration, single runs and the full table."""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from pvmincq import metrics, pipeline, svg
from pvmincq.dataset import (
    DEFAULT_NOISE_SD,
    DEFAULT_TRANSLATION,
    LabeledSample,
    ShiftSpec,
    apply_shift,
    generate_moons,
)
from pvmincq.diagnostics import diagnose
from pvmincq.pv import PAIRINGS
from pvmincq.utils import (
    PVMinCqError,
    default_output_dir,
    dumps,
    load_yaml,
    progress_bar,
    write_atomic,
)
from pvmincq.validation import (
    DEFAULT_EPSILON_QUANTILES,
    DEFAULT_GAMMAS,
    DEFAULT_K_FOLDS,
    DEFAULT_MUS,
    DEFAULT_NEIGHBORS,
    HyperGrid,
    ValidationReport,
)

LOG = logging.getLogger(__name__)

DEFAULT_ROTATIONS = (20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0)
DEGENERATE_MARK = "⌀"

# SeedSequence streams of one repetition
SOURCE_STREAM = 0
TARGET_STREAM = 1
TEST_STREAM = 2
VALIDATION_STREAM = 3

_TUPLE_FIELDS = (
    "rotations",
    "translation_offset",
    "methods",
    "mus",
    "gammas",
    "epsilon_quantiles",
    "epsilons",
    "neighbors",
)


class ConfigError(PVMinCqError, ValueError):
    pass


class BenchmarkIncomplete(PVMinCqError):
    def __init__(self, failures: list[tuple[str, str, int, str]]):
        self.failures = failures
        super().__init__(
            f"{len(failures)} benchmark job(s) failed, first: "
            + "{} {} seed {}: {}".format(*failures[0])
        )


def _floats(name: str, values) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in values)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a list of numbers, got {values!r}") from None


@dataclass(frozen=True)
class BenchConfig:
    n_pos: int = 150
    n_neg: int = 150
    noise_sd: float = DEFAULT_NOISE_SD
    test_size: int = 1500
    rotations: tuple[float, ...] = DEFAULT_ROTATIONS
    translation: bool = True
    translation_offset: tuple[float, ...] = DEFAULT_TRANSLATION
    seeds: int = 10
    base_seed: int = 0
    methods: tuple[str, ...] = pipeline.METHODS
    mus: tuple[float, ...] = DEFAULT_MUS
    gammas: tuple[float, ...] = DEFAULT_GAMMAS
    epsilon_quantiles: tuple[float, ...] = DEFAULT_EPSILON_QUANTILES
    epsilons: tuple[float, ...] = ()
    neighbors: tuple[int, ...] = DEFAULT_NEIGHBORS
    k_folds: int = DEFAULT_K_FOLDS
    reduced_source: bool = True
    pairing: str = "closest"
    output_dir: str = field(default_factory=default_output_dir)
    jobs: int = 4
    plots: bool = True

    def __post_init__(self):
        for name in _TUPLE_FIELDS:
            object.__setattr__(self, name, tuple(getattr(self, name)))
        unknown = [m for m in self.methods if m not in pipeline.METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}, expected some of {pipeline.METHODS}")
        if not self.methods:
            raise ConfigError("at least one method is needed")
        if self.n_pos < 1 or self.n_neg < 1 or self.test_size < 2:
            raise ConfigError("sample sizes must be positive (test_size >= 2)")
        if self.seeds < 1:
            raise ConfigError(f"seeds must be >= 1, got {self.seeds}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        if self.pairing not in PAIRINGS:
            raise ConfigError(f"unknown pairing {self.pairing!r}, expected one of {PAIRINGS}")
        if not self.rotations and not self.translation:
            raise ConfigError("no shift to run: empty rotations and translation disabled")
        if any(not 0.0 < q <= 1.0 for q in self.epsilon_quantiles):
            raise ConfigError(f"epsilon quantiles must be in (0, 1], got {self.epsilon_quantiles}")
        try:
            self.shifts()
            self.grid()
        except ValueError as ex:
            raise ConfigError(str(ex)) from ex

    @classmethod
    def from_dict(cls, data: dict, **overrides) -> BenchConfig:
        """Build from the nested YAML layout; every key is optional."""
        data = data or {}
        sample = data.get("data", {}) or {}
        shifts = data.get("shifts", {}) or {}
        seeds = data.get("seeds", {}) or {}
        grid = data.get("grid", {}) or {}

        values = {
            "n_pos": int(sample.get("n_pos", cls.n_pos)),
            "n_neg": int(sample.get("n_neg", cls.n_neg)),
            "noise_sd": float(sample.get("noise_sd", cls.noise_sd)),
            "test_size": int(sample.get("test_size", cls.test_size)),
            "translation_offset": _floats(
                "data.translation_offset", sample.get("translation_offset", DEFAULT_TRANSLATION)
            ),
            "rotations": _floats("shifts.rotations", shifts.get("rotations", DEFAULT_ROTATIONS)),
            "translation": bool(shifts.get("translation", True)),
            "seeds": int(seeds.get("count", cls.seeds)),
            "base_seed": int(seeds.get("base", cls.base_seed)),
            "mus": _floats("grid.mus", grid.get("mus", DEFAULT_MUS)),
            "gammas": _floats("grid.gammas", grid.get("gammas", DEFAULT_GAMMAS)),
            "epsilon_quantiles": _floats(
                "grid.epsilon_quantiles",
                grid.get("epsilon_quantiles", DEFAULT_EPSILON_QUANTILES),
            ),
            "epsilons": _floats("grid.epsilons", grid.get("epsilons", ()) or ()),
            "neighbors": tuple(int(k) for k in grid.get("neighbors", DEFAULT_NEIGHBORS)),
            "k_folds": int(grid.get("k_folds", DEFAULT_K_FOLDS)),
            "methods": tuple(data.get("methods", pipeline.METHODS)),
            "reduced_source": bool(data.get("reduced_source", cls.reduced_source)),
            "pairing": str(data.get("pairing", cls.pairing)),
            "jobs": int(data.get("jobs", cls.jobs)),
            "plots": bool(data.get("plots", True)),
        }
        if data.get("output_dir"):
            values["output_dir"] = str(data["output_dir"])
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def replace(self, **overrides) -> BenchConfig:
        return dataclasses.replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def shifts(self) -> list[ShiftSpec]:
        shifts = [ShiftSpec.rotation(angle) for angle in self.rotations]
        if self.translation:
            shifts.append(ShiftSpec.translation(self.translation_offset))
        return shifts

    def resolve_shift(self, shift: ShiftSpec) -> ShiftSpec:
        """Give a parsed translation the configured offset."""
        if shift.kind == "translation":
            return ShiftSpec.translation(self.translation_offset)
        return shift

    def grid(self) -> HyperGrid:
        return HyperGrid(
            mus=self.mus,
            gammas=self.gammas,
            epsilons=self.epsilons,
            neighbors=self.neighbors,
            k_folds=self.k_folds,
        )


def load_config(path=None, **overrides) -> BenchConfig:
    try:
        data = load_yaml(path) if path else {}
    except (OSError, yaml.YAMLError) as ex:
        raise ConfigError(f"cannot read config {path}: {ex}") from ex
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    try:
        return BenchConfig.from_dict(data, **overrides)
    except ConfigError:
        raise
    except (TypeError, ValueError) as ex:
        raise ConfigError(f"{path or 'config'}: {ex}") from ex


def _stream_seed(config: BenchConfig, repetition: int, stream: int) -> int:
    sequence = np.random.SeedSequence([config.base_seed, repetition, stream])
    return int(sequence.generate_state(1)[0])


@dataclass(frozen=True)
class Task:
    source: LabeledSample
    target: LabeledSample
    test: LabeledSample
    validation_seed: int


def make_task(config: BenchConfig, shift: ShiftSpec, repetition: int) -> Task:
    """Source, shifted target (labels kept for reporting only) and target test set.

    Samples depend on the repetition only, so every method and every
    shift of one repetition start from the same moons.
    """
    source = generate_moons(
        config.n_pos, config.n_neg, config.noise_sd, _stream_seed(config, repetition, SOURCE_STREAM)
    )
    center = source.centroid()
    target = generate_moons(
        config.n_pos, config.n_neg, config.noise_sd, _stream_seed(config, repetition, TARGET_STREAM)
    )
    test_pos = config.test_size // 2
    test = generate_moons(
        test_pos,
        config.test_size - test_pos,
        config.noise_sd,
        _stream_seed(config, repetition, TEST_STREAM),
    )
    return Task(
        source=source,
        target=apply_shift(target, shift, center=center),
        test=apply_shift(test, shift, center=center),
        validation_seed=_stream_seed(config, repetition, VALIDATION_STREAM),
    )


@dataclass
class JobResult:
    method: str
    shift: str
    seed: int
    accuracy: float
    degenerate: bool
    payload: dict
    plot: str | None = None

    @property
    def name(self) -> str:
        return f"{self.method}_{self.shift}_seed{self.seed}"

    def to_row(self) -> dict:
        cell = self.payload["cell"]
        matching = self.payload["matching"]
        diagnostics = self.payload["diagnostics"]
        return {
            "method": self.method,
            "shift": self.shift,
            "seed": self.seed,
            "accuracy": self.accuracy,
            "degenerate": self.degenerate,
            "mu": cell["mu"],
            "gamma": cell["gamma"],
            "eps": cell["eps"],
            "k": cell["k"],
            "pv": matching.pv if matching is not None else None,
            "eps_hat": diagnostics.eps_hat if diagnostics is not None else None,
        }


def _self_label_bounds(model: pipeline.TrainedModel, target: LabeledSample):
    """C-bound under the model's self-labels, checked against the true target labels."""
    if model.method == "mincq":
        return None
    if model.matching is not None:
        kept = target.subset(np.sort(model.matching.target_indices))
    else:
        kept = target
    transferred = model.training_sample.labels
    try:
        return metrics.corollary_bound(model.vote, kept, lambda points: transferred)
    except metrics.CBoundUndefined as ex:
        LOG.debug("%s: no self-label C-bound (%s)", model.method, ex)
        return None


def run_job(
    config: BenchConfig,
    method: str,
    shift: ShiftSpec,
    repetition: int,
    plot: bool = False,
) -> JobResult:
    """Train `method` on one task and evaluate it on the target test set."""
    task = make_task(config, shift, repetition)
    T = task.target.unlabeled()
    grid = config.grid()
    if method == "pv-mincq":
        grid = pipeline.resolve_grid(task.source, T, grid, config.epsilon_quantiles)

    model = pipeline.train(
        method,
        task.source,
        T,
        grid,
        task.validation_seed,
        reduced_source=config.reduced_source,
        pairing=config.pairing,
    )
    accuracy = metrics.accuracy(model.vote, task.test)
    bayes, gibbs, factor2 = metrics.factor2_check(model.vote, task.source)
    diagnostics = None
    if model.matching is not None:
        diagnostics = diagnose(model.vote, task.source, T, model.matching)

    payload = {
        "method": method,
        "shift": shift.name,
        "seed": repetition,
        "accuracy": accuracy,
        "degenerate": model.degenerate,
        "cell": dataclasses.asdict(model.cell),
        "validation": model.report,
        "matching": model.matching,
        "diagnostics": diagnostics,
        "source_bounds": metrics.bound_report(model.vote, task.source, other_points=T.points),
        "target_bounds": metrics.bound_report(model.vote, task.test),
        "self_label_bounds": _self_label_bounds(model, task.target),
        "factor2": {"bayes": bayes, "gibbs": gibbs, "holds": factor2},
    }
    LOG.info(
        "%s %s seed %s: accuracy %.1f%% (%s)",
        method,
        shift.name,
        repetition,
        100.0 * accuracy,
        model.cell,
    )

    rendered = None
    if plot and model.matching is not None:
        rendered = svg.render(
            task.source,
            task.target,
            vote=model.vote,
            matching=model.matching,
            title=f"{method} {shift.name} seed {repetition}: {100.0 * accuracy:.1f}%",
        )
    return JobResult(method, shift.name, repetition, accuracy, model.degenerate, payload, rendered)


def write_job(result: JobResult, output_dir) -> None:
    output_dir = Path(output_dir)
    write_atomic(output_dir / "runs" / f"{result.name}.json", dumps(result.payload) + "\n")
    if result.plot is not None:
        write_atomic(output_dir / "plots" / f"{result.shift}_seed{result.seed}.svg", result.plot)


def run_single(config: BenchConfig, method: str, shift: ShiftSpec, repetition: int = 0) -> dict:
    """One method on one shift and one repetition; returns the JSON report."""
    if method not in pipeline.METHODS:
        raise ValueError(f"unknown method {method!r}, expected one of {pipeline.METHODS}")
    result = run_job(config, method, config.resolve_shift(shift), repetition)
    return result.payload


def validate_single(
    config: BenchConfig, method: str, shift: ShiftSpec, repetition: int = 0
) -> ValidationReport:
    """Only the hyperparameter grid report of one method on one task."""
    task = make_task(config, config.resolve_shift(shift), repetition)
    T = task.target.unlabeled()
    grid = config.grid()
    if method == "pv-mincq":
        grid = pipeline.resolve_grid(task.source, T, grid, config.epsilon_quantiles)
    return pipeline.validate(
        method,
        task.source,
        T,
        grid,
        task.validation_seed,
        reduced_source=config.reduced_source,
        pairing=config.pairing,
    )


def summary_table(config: BenchConfig, results: list[JobResult]) -> pd.DataFrame:
    """Methods x shifts, mean accuracy in percent over the repetitions.

    A method whose every repetition self-labeled a single class on a shift
    gets the degenerate mark instead of a number.
    """
    by_cell = {}
    for result in results:
        by_cell.setdefault((result.method, result.shift), []).append(result)

    shift_names = [s.name for s in config.shifts()]
    rows = []
    for method in config.methods:
        row = {}
        for name in shift_names:
            cell = by_cell.get((method, name), [])
            if not cell:
                row[name] = ""
            elif all(r.degenerate for r in cell):
                row[name] = DEGENERATE_MARK
            else:
                row[name] = f"{100.0 * float(np.mean([r.accuracy for r in cell])):.1f}"
        rows.append(row)
    table = pd.DataFrame(rows, index=pd.Index(config.methods, name="method"), columns=shift_names)
    return table


def run_benchmark(config: BenchConfig, show_progress: bool = False) -> Path:
    """Every method x shift x repetition; writes table.csv, runs.csv, runs/ and plots/."""
    output_dir = Path(config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    shifts = config.shifts()
    jobs = [
        (method, shift, repetition)
        for method in config.methods
        for shift in shifts
        for repetition in range(config.seeds)
    ]
    order = {(m, s.name, r): i for i, (m, s, r) in enumerate(jobs)}
    LOG.info("Running %s jobs with %s worker(s) into %s", len(jobs), config.jobs, output_dir)

    results = []
    failures = []
    progress = progress_bar(len(jobs), "bench", show_progress)
    with ThreadPoolExecutor(max_workers=config.jobs) as executor:
        future_to_job = {
            executor.submit(
                run_job,
                config,
                method,
                shift,
                repetition,
                plot=config.plots and method == "pv-mincq",
            ): (method, shift, repetition)
            for method, shift, repetition in jobs
        }
        for future in as_completed(future_to_job):
            method, shift, repetition = future_to_job[future]
            progress.update(1)
            exc = future.exception()
            if exc is not None:
                LOG.error("Error in %s %s seed %s: %s", method, shift.name, repetition, exc)
                failures.append((method, shift.name, repetition, str(exc)))
                continue
            result = future.result()
            write_job(result, output_dir)
            results.append(result)
    progress.close()

    results.sort(key=lambda r: order[(r.method, r.shift, r.seed)])
    runs = pd.DataFrame([r.to_row() for r in results])
    write_atomic(output_dir / "runs.csv", runs.to_csv(index=False, float_format="%.10g"))
    table = summary_table(config, results)
    write_atomic(output_dir / "table.csv", table.to_csv())

    for method in config.methods:
        for shift in shifts:
            cell = [r for r in results if r.method == method and r.shift == shift.name]
            degenerate = sum(r.degenerate for r in cell)
            if degenerate:
                LOG.info(
                    "%s %s: %s of %s repetitions self-labeled a single class",
                    method,
                    shift.name,
                    degenerate,
                    len(cell),
                )
    if failures:
        failures.sort(key=lambda f: order[f[:3]])
        raise BenchmarkIncomplete(failures)
    LOG.info("Wrote %s", output_dir / "table.csv")
    return output_dir

