"""Labeled datasets and their CSV representation.

A dataset is an (N, d) feature matrix plus N integer labels in {1..L}.
The CSV format uses a header ``x_1,...,x_d,label``, ``.`` decimals and
UTF-8 encoding; floats are written with ``repr`` so a write/read round
trip is value-exact.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import CsvParseError, InvalidInputError


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with 1-based integer labels.

    Parameters
    ----------
    points : array_like of shape (N, d)
        Feature vectors, one row per data point.
    labels : array_like of shape (N,)
        Integer class labels in {1..L}.
    """

    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        labels = np.asarray(self.labels)
        if points.ndim != 2 or points.shape[0] < 1:
            raise InvalidInputError(f"points must be a non-empty 2-d array, got shape {points.shape}")
        if labels.shape != (points.shape[0],):
            raise InvalidInputError(
                f"labels must have shape ({points.shape[0]},), got {labels.shape}"
            )
        if not np.all(np.isfinite(points)):
            raise InvalidInputError("points contain non-finite entries")
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.floor(labels)):
                raise InvalidInputError("labels must be integers")
            labels = labels.astype(int)
        else:
            labels = labels.astype(int)
        if labels.min() < 1:
            raise InvalidInputError("labels must be 1-based positive integers")
        points.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "labels", labels)

    @property
    def num_points(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def num_labels(self) -> int:
        """Largest label value (labels are 1-based)."""
        return int(self.labels.max())

    def present_labels(self) -> np.ndarray:
        """Sorted unique labels that actually occur."""
        return np.unique(self.labels)


def write_dataset_csv(data: Dataset, path) -> None:
    """Write ``data`` as ``x_1,...,x_d,label`` rows."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow([f"x_{i + 1}" for i in range(data.dim)] + ["label"])
        for row, label in zip(data.points, data.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def read_dataset_csv(path) -> Dataset:
    """Read a dataset written by :func:`write_dataset_csv`.

    Raises
    ------
    CsvParseError
        On a malformed header, non-numeric feature, or bad label; the error
        carries the 1-based line number.
    """
    with open(path, "r", newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError("empty file", 1) from None
        if len(header) < 2 or header[-1].strip() != "label":
            raise CsvParseError("expected header 'x_1,...,x_d,label'", 1)
        dim = len(header) - 1
        expected = [f"x_{i + 1}" for i in range(dim)]
        if [h.strip() for h in header[:-1]] != expected:
            raise CsvParseError("expected header 'x_1,...,x_d,label'", 1)
        rows = []
        labels = []
        for line_number, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 1:
                raise CsvParseError(f"expected {dim + 1} columns, got {len(row)}", line_number)
            try:
                rows.append([float(v) for v in row[:-1]])
            except ValueError as exc:
                raise CsvParseError(f"bad feature value: {exc}", line_number) from None
            try:
                labels.append(int(row[-1]))
            except ValueError:
                raise CsvParseError(f"bad label {row[-1]!r}", line_number) from None
    if not rows:
        raise CsvParseError("no data rows", 2)
    return Dataset(np.array(rows), np.array(labels))
