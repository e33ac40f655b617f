"""Domain types, attribute computation, and dataset persistence.

The monitor describes every human-robot encounter with an 8-dimensional
attribute vector; labeled vectors accumulate in a global CSV-backed dataset.
Units are SI throughout except the relative heading, which is stored in
degrees.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

N_ATTRIBUTES = 8

#: Column order of the attribute vector (and of the dataset CSV).
ATTRIBUTE_NAMES = ("d_x", "d_y", "theta", "d", "d'", "v_h", "v_r", "lane")

#: CSV header column names (ASCII-safe variants of ATTRIBUTE_NAMES).
CSV_COLUMNS = ("dx", "dy", "theta", "d", "dprime", "vh", "vr", "lane")

#: Indices of the human-dependent attributes (everything the robot cannot set).
HUMAN_ATTRIBUTE_INDICES = (0, 1, 2, 3, 4, 5)

#: Indices of the robot-controllable attributes: velocity and lane.
CONTROL_ATTRIBUTE_INDICES = (6, 7)


class InvalidInputError(ValueError):
    """Raised when a state or attribute vector contains non-finite values."""


class DatasetParseError(ValueError):
    """Raised on malformed dataset files; carries the offending row number."""

    def __init__(self, message: str, row: int):
        super().__init__(f"row {row}: {message}")
        self.row = row


def wrap_angle(angle: float) -> float:
    """Wrap an angle in radians to (-pi, pi]."""
    wrapped = math.fmod(angle, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    elif wrapped > math.pi:
        wrapped -= 2.0 * math.pi
    return wrapped


def wrap_degrees(angle: float) -> float:
    """Wrap an angle in degrees to (-180, 180]."""
    wrapped = math.fmod(angle, 360.0)
    if wrapped <= -180.0:
        wrapped += 360.0
    elif wrapped > 180.0:
        wrapped -= 360.0
    return wrapped


@dataclass
class AgentState:
    """Planar pose and scalar speed of one agent (robot or human)."""

    x: float          # m
    y: float          # m
    heading: float    # rad, wrapped to (-pi, pi]
    speed: float      # m/s, >= 0

    def __post_init__(self):
        self.heading = wrap_angle(self.heading)

    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def distance_to(self, other: "AgentState") -> float:
        return math.hypot(other.x - self.x, other.y - self.y)


@dataclass(frozen=True)
class AttributeVector:
    """Joint human-robot state used as decision-tree input.

    Relative quantities are human-minus-robot; ``theta`` is the relative
    heading in degrees, ``lane`` the discretized robot y-position in meters.
    """

    d_x: float      # m
    d_y: float      # m
    theta: float    # deg, in (-180, 180]
    d: float        # m
    d_prime: float  # m/s
    v_h: float      # m/s
    v_r: float      # m/s
    lane: float     # m

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.d_x, self.d_y, self.theta, self.d,
             self.d_prime, self.v_h, self.v_r, self.lane]
        )

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "AttributeVector":
        if len(values) != N_ATTRIBUTES:
            raise InvalidInputError(
                f"attribute vector needs {N_ATTRIBUTES} values, got {len(values)}"
            )
        values = [float(v) for v in values]
        if not all(math.isfinite(v) for v in values):
            raise InvalidInputError("attribute vector contains non-finite values")
        return cls(*values)

    def __getitem__(self, index: int) -> float:
        return self.as_array()[index]


class Label(enum.Enum):
    """Binary interference outcome; INTERFERE is the positive class."""

    INTERFERE = 1
    NOT_INTERFERE = 0

    def to_int(self) -> int:
        return self.value

    @classmethod
    def from_int(cls, value: int) -> "Label":
        if value == 1:
            return cls.INTERFERE
        if value == 0:
            return cls.NOT_INTERFERE
        raise ValueError(f"unknown label value {value!r}")

    def opposite(self) -> "Label":
        return Label.NOT_INTERFERE if self is Label.INTERFERE else Label.INTERFERE


@dataclass(frozen=True)
class LabeledSample:
    attributes: AttributeVector
    label: Label


class Dataset:
    """Ordered collection of labeled attribute vectors.

    Keeps a lazily built (n, 8) matrix view for fast neighborhood queries;
    the cache is invalidated on append.  Mutation must be externally
    serialized; concurrent reads between mutations are safe.
    """

    def __init__(self, samples: Iterable[LabeledSample] = ()):
        self._samples: list[LabeledSample] = list(samples)
        self._matrix: Optional[np.ndarray] = None
        self._labels: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self._samples)

    def __iter__(self) -> Iterator[LabeledSample]:
        return iter(self._samples)

    def __getitem__(self, index: int) -> LabeledSample:
        return self._samples[index]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self._samples == other._samples

    def append(self, sample: LabeledSample) -> None:
        self._samples.append(sample)
        self._matrix = None
        self._labels = None

    def extend(self, samples: Iterable[LabeledSample]) -> None:
        self._samples.extend(samples)
        self._matrix = None
        self._labels = None

    @property
    def matrix(self) -> np.ndarray:
        """(n, 8) array of attribute vectors in sample order."""
        if self._matrix is None or len(self._matrix) != len(self._samples):
            self._matrix = np.array(
                [s.attributes.as_array() for s in self._samples]
            ).reshape(len(self._samples), N_ATTRIBUTES)
        return self._matrix

    @property
    def labels(self) -> np.ndarray:
        """(n,) integer array: 1 = interfere, 0 = not interfere."""
        if self._labels is None or len(self._labels) != len(self._samples):
            self._labels = np.array(
                [s.label.to_int() for s in self._samples], dtype=np.int64
            )
        return self._labels

    @property
    def attribute_bounds(self) -> Optional[tuple[np.ndarray, np.ndarray]]:
        """(min, max) per attribute, or None for an empty dataset."""
        if not self._samples:
            return None
        m = self.matrix
        return m.min(axis=0), m.max(axis=0)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        """New dataset holding the given rows, preserving order."""
        return Dataset(self._samples[i] for i in indices)

    def class_counts(self) -> tuple[int, int]:
        """(n_interfere, n_not_interfere)."""
        n_pos = int(self.labels.sum()) if self._samples else 0
        return n_pos, len(self._samples) - n_pos

    @classmethod
    def from_arrays(cls, matrix: np.ndarray, labels: np.ndarray) -> "Dataset":
        samples = [
            LabeledSample(AttributeVector.from_array(row), Label.from_int(int(lab)))
            for row, lab in zip(matrix, labels)
        ]
        return cls(samples)


def nearest_lane(y: float, lanes: Sequence[float]) -> float:
    """Discretize a y-position to the closest lane; ties break low."""
    best = None
    best_gap = math.inf
    for lane in sorted(lanes):
        gap = abs(y - lane)
        if gap < best_gap - 1e-12:
            best, best_gap = lane, gap
    return best


def compute_attributes(
    robot: AgentState,
    human: AgentState,
    prev_d: Optional[float],
    dt: float,
    lanes: Sequence[float],
) -> AttributeVector:
    """Build the attribute vector for one human-robot pair.

    ``prev_d`` is the pair distance one tick earlier; when absent (first
    observation) the distance derivative is 0, the neutral value between
    approach and retreat.
    """
    if dt <= 0:
        raise InvalidInputError("dt must be positive")
    if not lanes:
        raise InvalidInputError("lane set must be non-empty")
    fields = (robot.x, robot.y, robot.heading, robot.speed,
              human.x, human.y, human.heading, human.speed)
    if not all(math.isfinite(v) for v in fields):
        raise InvalidInputError("agent state contains non-finite values")

    d_x = human.x - robot.x
    d_y = human.y - robot.y
    d = math.hypot(d_x, d_y)
    d_prime = 0.0 if prev_d is None else (d - prev_d) / dt
    theta = wrap_degrees(math.degrees(human.heading - robot.heading))
    return AttributeVector(
        d_x=d_x,
        d_y=d_y,
        theta=theta,
        d=d,
        d_prime=d_prime,
        v_h=human.speed,
        v_r=robot.speed,
        lane=nearest_lane(robot.y, lanes),
    )


def save_dataset(dataset: Dataset, path) -> None:
    """Write a dataset as CSV: 8 attribute columns plus an integer label."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS + ("label",))
        for sample in dataset:
            writer.writerow(
                [repr(float(v)) for v in sample.attributes.as_array()]
                + [sample.label.to_int()]
            )


def load_dataset(path) -> Dataset:
    """Read a dataset CSV written by :func:`save_dataset`.

    Raises :class:`DatasetParseError` with the 1-based row number for rows
    with the wrong column count, non-numeric fields, or unknown labels.
    """
    samples = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for row_no, row in enumerate(reader, start=1):
            if row_no == 1:
                continue  # header
            if not row:
                continue
            if len(row) != N_ATTRIBUTES + 1:
                raise DatasetParseError(
                    f"expected {N_ATTRIBUTES + 1} columns, got {len(row)}", row_no
                )
            try:
                values = [float(v) for v in row[:N_ATTRIBUTES]]
            except ValueError as exc:
                raise DatasetParseError(str(exc), row_no) from exc
            raw_label = row[N_ATTRIBUTES].strip()
            if raw_label not in ("0", "1"):
                raise DatasetParseError(f"unknown label {raw_label!r}", row_no)
            samples.append(
                LabeledSample(
                    AttributeVector.from_array(values), Label.from_int(int(raw_label))
                )
            )
    return Dataset(samples)
