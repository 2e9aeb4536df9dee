"""CSV ingestion, chronological splits, z-scoring and sliding windows."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Optional, Sequence, Tuple

import numpy as np

from .exceptions import DataError

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class Scaler:
    """Per-channel z-scoring fitted on training rows."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, rows: np.ndarray, columns: Sequence[str] = ()) -> "Scaler":
        mean = rows.mean(axis=0)
        std = rows.std(axis=0)
        flat = std == 0.0
        if flat.any():
            names = [columns[i] if i < len(columns) else str(i) for i in np.flatnonzero(flat)]
            warnings.warn(f"constant training values in channel(s) {names}; using std=1",
                          RuntimeWarning, stacklevel=2)
            std = np.where(flat, 1.0, std)
        return cls(mean, std)

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def inverse_transform(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean


@dataclass(frozen=True)
class WindowSpec:
    input_len: int
    pred_len: int
    stride: int = 1

    def __post_init__(self):
        if self.input_len < 1 or self.pred_len < 1 or self.stride < 1:
            raise DataError(f"window lengths and stride must be positive: {self}")

    def count(self, length: int) -> int:
        span = self.input_len + self.pred_len
        return 0 if length < span else (length - span) // self.stride + 1


@dataclass(frozen=True)
class SeriesDataset:
    """Raw values ``[N, C]`` plus optional split bounds and fitted scaler.

    ``split_bounds = (train_end, val_end)``; the test split runs from
    ``val_end`` to ``N``.
    """

    values: np.ndarray
    columns: Tuple[str, ...]
    timestamps: Optional[Tuple[str, ...]] = None
    split_bounds: Optional[Tuple[int, int]] = None
    scaler: Optional[Scaler] = None
    _scaled: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def num_rows(self) -> int:
        return self.values.shape[0]

    @property
    def num_channels(self) -> int:
        return self.values.shape[1]

    @property
    def scaled(self) -> np.ndarray:
        if self.scaler is None:
            raise DataError("dataset has not been split and scaled yet")
        return self._scaled

    def split_range(self, split: str) -> Tuple[int, int]:
        if self.split_bounds is None:
            raise DataError("dataset has no split bounds")
        train_end, val_end = self.split_bounds
        ranges = {"train": (0, train_end), "val": (train_end, val_end), "test": (val_end, self.num_rows)}
        if split not in ranges:
            raise DataError(f"unknown split {split!r}; expected one of {SPLITS}")
        return ranges[split]

    def split_values(self, split: str, scaled: bool = True) -> np.ndarray:
        lo, hi = self.split_range(split)
        return (self.scaled if scaled else self.values)[lo:hi]

    def select(self, columns: Sequence[str]) -> "SeriesDataset":
        missing = [c for c in columns if c not in self.columns]
        if missing:
            raise DataError(f"unknown column(s) {missing}; available: {list(self.columns)}")
        idx = [self.columns.index(c) for c in columns]
        return SeriesDataset(self.values[:, idx], tuple(columns), self.timestamps)


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_csv(path, columns: Optional[Sequence[str]] = None) -> SeriesDataset:
    """Read a UTF-8, comma-delimited file with a header row.

    A non-numeric first column is kept as timestamps; every other column is a
    variate, in file order. NaN/inf cells and ragged rows are errors.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"data file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise DataError(f"{path}: file is empty")
    header, body = [h.strip() for h in rows[0]], rows[1:]
    if not body:
        raise DataError(f"{path}: header row but no data rows")
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {lineno} has {len(row)} cells, header has {len(header)}")

    has_time = not _is_number(body[0][0])
    first = 1 if has_time else 0
    names = header[first:]
    if not names:
        raise DataError(f"{path}: no numeric columns")
    values = np.empty((len(body), len(names)))
    for r, row in enumerate(body):
        for c in range(first, len(header)):
            cell = row[c].strip()
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {r + 2}, column {header[c]!r}: "
                                f"cannot parse {cell!r} as a number") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: row {r + 2}, column {header[c]!r}: non-finite value {cell!r}")
            values[r, c - first] = v
    timestamps = tuple(row[0] for row in body) if has_time else None
    ds = SeriesDataset(values, tuple(names), timestamps)
    return ds.select(columns) if columns else ds


def split_and_scale(ds: SeriesDataset, fractions: Optional[Sequence[float]] = None,
                    counts: Optional[Sequence[int]] = None) -> SeriesDataset:
    """Chronological train/val/test split, z-scoring fitted on train rows only.

    ``fractions=(a, b, c)`` gives ``train_end = floor(N*a)`` and
    ``val_end = train_end + floor(N*b)``; the test split takes the rest.
    ``counts=(n_train, n_val, n_test)`` uses explicit row counts; rows after
    ``n_train + n_val + n_test`` are dropped.
    """
    if (fractions is None) == (counts is None):
        raise DataError("give exactly one of fractions or counts")
    n = ds.num_rows
    values, timestamps = ds.values, ds.timestamps
    if fractions is not None:
        if len(fractions) != 3 or any(f < 0 for f in fractions) or sum(fractions) > 1.0 + 1e-9:
            raise DataError(f"fractions must be three non-negative numbers summing to <= 1, got {fractions}")
        train_end = int(math.floor(n * fractions[0] + 1e-9))
        val_end = train_end + int(math.floor(n * fractions[1] + 1e-9))
        total = n if abs(sum(fractions) - 1.0) < 1e-9 else val_end + int(math.floor(n * fractions[2] + 1e-9))
    else:
        if len(counts) != 3 or any(int(c) < 0 for c in counts):
            raise DataError(f"counts must be three non-negative integers, got {counts}")
        train_end = int(counts[0])
        val_end = train_end + int(counts[1])
        total = val_end + int(counts[2])
        if total > n:
            raise DataError(f"split counts {tuple(counts)} need {total} rows, file has {n}")
    if not 0 < train_end < val_end <= total:
        raise DataError(f"degenerate split bounds train_end={train_end}, val_end={val_end}, n={total}")
    values = values[:total]
    timestamps = timestamps[:total] if timestamps is not None else None
    scaler = Scaler.fit(values[:train_end], ds.columns)
    return SeriesDataset(values, ds.columns, timestamps, (train_end, val_end), scaler,
                         scaler.transform(values))


def window_arrays(ds: SeriesDataset, spec: WindowSpec, split: str,
                  scaled: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """All windows of a split stacked: ``X[n, P, C]``, ``Y[n, F, C]`` (read-only views)."""
    block = ds.split_values(split, scaled=scaled)
    n = spec.count(block.shape[0])
    c = block.shape[1]
    if n == 0:
        return np.empty((0, spec.input_len, c)), np.empty((0, spec.pred_len, c))
    span = spec.input_len + spec.pred_len
    view = np.lib.stride_tricks.sliding_window_view(block, span, axis=0)[:: spec.stride][:n]
    view = np.swapaxes(view, 1, 2)
    return view[:, : spec.input_len], view[:, spec.input_len:]


def windows(ds: SeriesDataset, spec: WindowSpec, split: str,
            scaled: bool = True) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Yield ``(x[P, C], y[F, C])`` for every window wholly inside ``split``."""
    xs, ys = window_arrays(ds, spec, split, scaled)
    for x, y in zip(xs, ys):
        yield x, y


def synth_multiscale(n: int, channels: int = 1, periods: Sequence[float] = (24,),
                     trend_slope: float = 0.0, noise_sigma: float = 0.0, seed: int = 0,
                     amplitudes: Optional[Sequence[float]] = None) -> SeriesDataset:
    """Sum of sinusoids + linear trend + Gaussian noise, per channel.

    Each channel gets seeded phase offsets per period; amplitudes default to 1.
    """
    if any(p < 2 for p in periods):
        raise DataError(f"periods must be >= 2, got {list(periods)}")
    amplitudes = [1.0] * len(periods) if amplitudes is None else list(amplitudes)
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, 2 * np.pi, size=(channels, len(periods)))
    t = np.arange(n, dtype=np.float64)
    values = np.zeros((n, channels))
    for c in range(channels):
        for k, (period, amp) in enumerate(zip(periods, amplitudes)):
            values[:, c] += amp * np.sin(2 * np.pi * t / period + phases[c, k])
    values += trend_slope * t[:, None]
    if noise_sigma > 0:
        values += rng.normal(0.0, noise_sigma, size=values.shape)
    return SeriesDataset(values, tuple(f"x{c}" for c in range(channels)))


def write_csv(path, ds: SeriesDataset, time_column: str = "date") -> None:
    """Write a dataset back out in the format :func:`load_csv` reads."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        stamps = ds.timestamps
        w.writerow(([time_column] if stamps else []) + list(ds.columns))
        for i, row in enumerate(ds.values):
            w.writerow(([stamps[i]] if stamps else []) + [repr(float(v)) for v in row])


def with_values(ds: SeriesDataset, values: np.ndarray) -> SeriesDataset:
    return replace(ds, values=values, split_bounds=None, scaler=None, _scaled=None)
