"""Samples, the inter-twinning moons generator, domain shifts and CSV I/O."""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.datasets import make_moons

from pvmincq.utils import PVMinCqError

LOG = logging.getLogger(__name__)

LABEL_COLUMN = "y"
DEFAULT_NOISE_SD = 0.05
DEFAULT_TRANSLATION = (1.0, -0.5)


class SampleError(PVMinCqError, ValueError):
    """A sample violates its contract (empty, non-finite, bad labels...)."""


class CSVParseError(SampleError):
    def __init__(self, path, line: int, reason: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}: line {line}: {reason}")


def _as_points(points) -> np.ndarray:
    arr = np.array(points, dtype=float)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise SampleError("a sample needs at least one point")
    if arr.shape[1] == 0:
        raise SampleError("points need at least one coordinate")
    if not np.all(np.isfinite(arr)):
        raise SampleError("all coordinates must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class UnlabeledSample:
    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", _as_points(self.points))

    def __len__(self) -> int:
        return self.points.shape[0]

    def __eq__(self, other) -> bool:
        return type(other) is type(self) and np.array_equal(self.points, other.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def subset(self, indices) -> UnlabeledSample:
        return UnlabeledSample(self.points[np.asarray(indices, dtype=int)])


@dataclass(frozen=True, eq=False)
class LabeledSample:
    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        points = _as_points(self.points)
        labels = np.array(self.labels).reshape(-1)
        if labels.shape[0] != points.shape[0]:
            raise SampleError(
                f"{points.shape[0]} points but {labels.shape[0]} labels"
            )
        if not np.all(np.isin(labels, (-1, 1))):
            bad = sorted({float(v) for v in np.unique(labels)} - {-1.0, 1.0})
            raise SampleError(f"labels must be -1 or +1, found {bad}")
        labels = labels.astype(np.int64)
        labels.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.points.shape[0]

    def __eq__(self, other) -> bool:
        return (
            type(other) is type(self)
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.labels, other.labels)
        )

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n_pos(self) -> int:
        return int(np.sum(self.labels == 1))

    @property
    def n_neg(self) -> int:
        return int(np.sum(self.labels == -1))

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def subset(self, indices) -> LabeledSample:
        indices = np.asarray(indices, dtype=int)
        return LabeledSample(self.points[indices], self.labels[indices])

    def unlabeled(self) -> UnlabeledSample:
        return UnlabeledSample(self.points)


@dataclass(frozen=True)
class ShiftSpec:
    """Either an anticlockwise rotation (degrees) or a translation."""

    kind: str
    angle: float | None = None
    offset: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind == "rotation":
            if self.angle is None or not (0.0 < self.angle <= 360.0):
                raise ValueError(f"rotation angle must be in (0, 360], got {self.angle}")
        elif self.kind == "translation":
            if self.offset is None or not all(math.isfinite(v) for v in self.offset):
                raise ValueError(f"translation offset must be finite, got {self.offset}")
            object.__setattr__(self, "offset", tuple(float(v) for v in self.offset))
        else:
            raise ValueError(f"unknown shift kind {self.kind!r}")

    @classmethod
    def rotation(cls, angle: float) -> ShiftSpec:
        return cls("rotation", angle=float(angle))

    @classmethod
    def translation(cls, offset=DEFAULT_TRANSLATION) -> ShiftSpec:
        return cls("translation", offset=tuple(offset))

    @classmethod
    def parse(cls, text: str, offset=DEFAULT_TRANSLATION) -> ShiftSpec:
        """Parse `rot20`, `rotation:20`, `20` or `trans` / `translation`."""
        text = text.strip().lower()
        if text in ("trans", "translation"):
            return cls.translation(offset)
        match = re.fullmatch(r"(?:rot|rotation:?)?\s*(-?\d+(?:\.\d+)?)", text)
        if not match:
            raise ValueError(f"cannot parse shift {text!r}")
        return cls.rotation(float(match.group(1)))

    @property
    def name(self) -> str:
        if self.kind == "translation":
            return "trans"
        return f"rot{self.angle:g}"


def generate_moons(
    n_pos: int,
    n_neg: int,
    noise_sd: float = DEFAULT_NOISE_SD,
    seed: int = 0,
) -> LabeledSample:
    """Sample the two inter-twinning moons.

    The upper moon (cos t, sin t) is labeled +1 and the lower moon
    (1 - cos t, 0.5 - sin t) is labeled -1, t evenly spaced on [0, pi],
    plus isotropic Gaussian noise. Point order is shuffled with `seed`.
    """
    if n_pos < 1 or n_neg < 1:
        raise SampleError(f"need at least one point per moon, got ({n_pos}, {n_neg})")
    if noise_sd < 0:
        raise ValueError(f"noise_sd must be >= 0, got {noise_sd}")
    points, moon = make_moons(
        n_samples=(n_pos, n_neg),
        shuffle=True,
        noise=noise_sd,
        random_state=seed,
    )
    labels = np.where(moon == 0, 1, -1)
    return LabeledSample(points, labels)


def _rotate(points: np.ndarray, angle: float, center: np.ndarray) -> np.ndarray:
    theta = math.radians(angle)
    rotation = np.array(
        [
            [math.cos(theta), -math.sin(theta)],
            [math.sin(theta), math.cos(theta)],
        ]
    )
    return (points - center) @ rotation.T + center


def apply_shift(sample, shift: ShiftSpec, center=None):
    """Rotate about `center` (default: the sample centroid) or translate.

    Works on labeled and unlabeled samples; labels are carried over.
    """
    points = sample.points
    if shift.kind == "rotation":
        if sample.dim != 2:
            raise SampleError(f"rotation needs 2-d points, sample has d={sample.dim}")
        center = sample.centroid() if center is None else np.asarray(center, dtype=float)
        moved = _rotate(points, shift.angle, center)
    else:
        offset = np.asarray(shift.offset, dtype=float)
        if offset.shape != (sample.dim,):
            raise SampleError(
                f"offset has {offset.size} coordinates, sample has d={sample.dim}"
            )
        moved = points + offset

    if isinstance(sample, LabeledSample):
        return LabeledSample(moved, sample.labels)
    return UnlabeledSample(moved)


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def _has_header(path: Path) -> bool:
    """A first line is a header only if none of its fields is a number.

    A data row with one malformed field is not a header; it is parsed and
    reported as a bad row.
    """
    with open(path, "r") as f:
        first = f.readline()
    return not any(_is_number(token) for token in first.strip().split(","))


def read_csv(path) -> LabeledSample | UnlabeledSample:
    """Read a sample; a last column named `y` makes it labeled.

    Files without a header row hold coordinates only.
    """
    path = Path(path)
    header = _has_header(path)
    try:
        frame = pd.read_csv(
            path,
            header=0 if header else None,
            dtype=str,
            skip_blank_lines=False,
        )
    except pd.errors.EmptyDataError:
        raise SampleError(f"{path}: no rows") from None
    except pd.errors.ParserError as ex:
        found = re.search(r"line (\d+)", str(ex))
        line = int(found.group(1)) if found else 0
        raise CSVParseError(path, line, "mixed dimensionality (unexpected field count)") from ex

    first_line = 2 if header else 1
    values = frame.apply(pd.to_numeric, errors="coerce")
    bad_rows = np.flatnonzero(values.isna().any(axis=1).to_numpy())
    if bad_rows.size:
        row = int(bad_rows[0])
        raise CSVParseError(
            path,
            row + first_line,
            f"malformed row {frame.iloc[row].tolist()}",
        )
    if values.empty:
        raise SampleError(f"{path}: no rows")

    columns = [str(c).strip() for c in frame.columns]
    LOG.debug("read %s rows from %s (columns %s)", len(values), path, columns)
    if header and columns[-1] == LABEL_COLUMN:
        if len(columns) < 2:
            raise SampleError(f"{path}: label column without coordinates")
        data = values.to_numpy(dtype=float)
        return LabeledSample(data[:, :-1], data[:, -1])
    return UnlabeledSample(values.to_numpy(dtype=float))


def write_csv(sample, path) -> None:
    columns = [f"x{i + 1}" for i in range(sample.dim)]
    frame = pd.DataFrame(sample.points, columns=columns)
    if isinstance(sample, LabeledSample):
        frame[LABEL_COLUMN] = sample.labels
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
