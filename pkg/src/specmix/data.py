"""Time-series ingestion, splitting and standardization for experiments.

CSV files carry a header row, use `.` decimals and UTF-8; lines starting
with `#` are ignored.  Every loader is loss-bounded: a write/read
round-trip reproduces values to within 1e-12.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateVarianceError,
    NonMonotoneTimeError,
    ParseError,
    TooShortError,
)


@dataclass(eq=False)
class TimeSeries:
    times: np.ndarray
    values: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float))
        self.values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if self.times.shape != self.values.shape or self.times.ndim != 1:
            raise ValueError("times and values must be 1-d and equally long")
        if not (np.all(np.isfinite(self.times)) and np.all(np.isfinite(self.values))):
            raise ValueError("times and values must be finite")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            bad = int(np.flatnonzero(np.diff(self.times) <= 0)[0]) + 1
            raise NonMonotoneTimeError(
                f"times must be strictly increasing (violated at sample {bad})")

    def __len__(self):
        return self.times.size


def load_csv(path, time_column="time", value_column="value", name=None):
    """Read a time series from a CSV file.

    Raises ParseError with the 1-based file line for non-numeric fields,
    NonMonotoneTimeError naming the line of the first non-increasing
    timestamp, and OSError for missing files.
    """
    times, values, rows = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        filtered = ((num, line) for num, line in enumerate(fh, start=1)
                    if line.strip() and not line.lstrip().startswith("#"))
        nums, lines = [], []
        for num, line in filtered:
            nums.append(num)
            lines.append(line)
        reader = csv.DictReader(lines)
        if reader.fieldnames is None:
            raise ParseError(f"{path}: empty file", line=1)
        for col in (time_column, value_column):
            if col not in reader.fieldnames:
                raise ParseError(f"{path}: missing column {col!r}", line=nums[0])
        for offset, row in enumerate(reader, start=1):
            lineno = nums[offset]
            for col in (time_column, value_column):
                try:
                    float(row[col])
                except (TypeError, ValueError):
                    raise ParseError(
                        f"{path}:{lineno}: non-numeric field in column {col!r}",
                        line=lineno, column=col)
            times.append(float(row[time_column]))
            values.append(float(row[value_column]))
            rows.append(lineno)
    if not times:
        raise ParseError(f"{path}: no data rows", line=nums[-1] if nums else 1)
    t = np.asarray(times)
    bad = np.flatnonzero(np.diff(t) <= 0)
    if bad.size:
        raise NonMonotoneTimeError(
            f"{path}:{rows[bad[0] + 1]}: time not strictly increasing",
            line=rows[bad[0] + 1])
    return TimeSeries(t, np.asarray(values), name=name or str(path))


def save_csv(series, path, time_column="time", value_column="value"):
    """Write a series with full round-trip precision (shortest repr)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([time_column, value_column])
        for t, v in zip(series.times, series.values):
            writer.writerow([repr(float(t)), repr(float(v))])


def split_train_test(series, ratio=0.9, mode="tail", seed=None):
    """Split into train/test of sizes ceil(ratio*n) / remainder.

    `tail` holds out the final segment; `random` draws a seeded partition
    and keeps each part in time order.
    """
    n = len(series)
    if n < 10:
        raise TooShortError(f"need at least 10 samples, got {n}")
    n_train = int(np.ceil(ratio * n))
    if mode == "tail":
        idx_train = np.arange(n_train)
        idx_test = np.arange(n_train, n)
    elif mode == "random":
        if seed is None:
            raise ValueError("random mode requires a seed")
        perm = np.random.Generator(np.random.Philox(seed)).permutation(n)
        idx_train = np.sort(perm[:n_train])
        idx_test = np.sort(perm[n_train:])
    else:
        raise ValueError("mode must be 'tail' or 'random'")
    make = lambda idx, tag: TimeSeries(series.times[idx], series.values[idx],
                                       name=f"{series.name}[{tag}]")
    return make(idx_train, "train"), make(idx_test, "test")


def standardize(train, test):
    """Shift/scale both series by the training mean and std.

    Returns ``(train', test', stats)`` with ``stats = (mean, std)``;
    raises DegenerateVarianceError for constant training values.
    """
    mean = float(np.mean(train.values))
    std = float(np.std(train.values))
    if not np.isfinite(std) or std <= 0.0:
        raise DegenerateVarianceError("training values have zero variance")
    out_train = TimeSeries(train.times, (train.values - mean) / std, name=train.name)
    out_test = TimeSeries(test.times, (test.values - mean) / std, name=test.name)
    return out_train, out_test, (mean, std)


def destandardize(values, stats):
    mean, std = stats
    return np.asarray(values, dtype=float) * std + mean
