"""CSV ingestion, chronological splits, standardization and windowing.

Two split conventions are supported by :func:`split_standardize_window`:

``"rows"``
    Partition numbers are row counts (the ETT benchmark loaders use
    ``(8640, 2880, 2880)`` hourly rows).  Each validation/test split may read
    its first lookback from the rows just before its border, so a split of
    ``R`` rows yields ``R - P + 1`` windows (``R - T - P + 1`` for train).
``"windows"``
    Partition numbers are window counts and the borders are placed so that
    each split yields exactly that many windows.

In both, a window's target rows lie inside its own split, and the scaler
is fitted on the training rows only.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

ETT_HOURLY_ROWS = (8640, 2880, 2880)
ETTH1_TABLE_PARTITION = (8545, 2881, 2881)
SYNTHETIC_KINDS = ("sine_mix", "trend_plus_noise", "step")


class DataError(ValueError):
    """Malformed input data or an impossible split request."""


@dataclass
class SeriesTable:
    name: str
    channel_names: list[str]
    values: np.ndarray  # [rows, F]
    frequency: str = ""
    index: list[str] | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] < 1:
            raise DataError(f"values must be [rows, F>=1], got {self.values.shape}")
        if self.values.shape[1] != len(self.channel_names):
            raise DataError("channel_names does not match the number of columns")
        if not np.isfinite(self.values).all():
            raise DataError("series contains missing or non-finite values")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]


@dataclass
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean


@dataclass
class WindowedDataset:
    """Stride-1 windows over a standardized series.

    ``starts[i]`` is the first lookback row of window ``i``; its target rows
    are ``starts[i] + T .. starts[i] + T + P - 1``.
    """

    split: str
    values: np.ndarray  # standardized [rows, F], shared between splits
    starts: np.ndarray
    lookback: int
    horizon: int
    scaler: Scaler
    target_range: tuple[int, int]

    def __len__(self) -> int:
        return len(self.starts)

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def window(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        s = int(self.starts[i])
        x = self.values[s:s + self.lookback].T
        y = self.values[s + self.lookback:s + self.lookback + self.horizon].T
        return x, y

    def batch(self, indices) -> tuple[np.ndarray, np.ndarray]:
        """``x [B, F, T]`` and ``y [B, F, P]`` for the given window indices."""
        s = self.starts[np.asarray(indices)]
        rows = s[:, None] + np.arange(self.lookback + self.horizon)
        w = self.values[rows].transpose(0, 2, 1)
        return w[:, :, :self.lookback], w[:, :, self.lookback:]


def load_csv(path, name: str | None = None, frequency: str = "") -> SeriesTable:
    """Read ``index,ch1,ch2,...`` with a header row; every value cell must be numeric."""
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 2:
            raise DataError(f"{path}: need an index column and at least one channel")
        channels = [h.strip() for h in header[1:]]
        index, rows = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}: line {lineno} has {len(rec)} cells, expected {len(header)}")
            values = []
            for col, cell in zip(channels, rec[1:]):
                cell = cell.strip()
                if not cell:
                    raise DataError(f"{path}: line {lineno}, column {col!r}: missing value")
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: line {lineno}, column {col!r}: "
                                    f"non-numeric value {cell!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: line {lineno}, column {col!r}: non-finite value")
                values.append(v)
            index.append(rec[0])
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return SeriesTable(name or path.stem, channels, np.array(rows), frequency, index)


def write_csv(table: SeriesTable, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    index = table.index or [str(i) for i in range(table.rows)]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", *table.channel_names])
        for label, row in zip(index, table.values):
            w.writerow([label, *(repr(float(v)) for v in row)])


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def fit_scaler(values: np.ndarray) -> Scaler:
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    flat = std < 1e-12
    if flat.any():
        log.warning("constant channel(s) %s in training rows; std clamped to 1",
                    np.nonzero(flat)[0].tolist())
        std = np.where(flat, 1.0, std)
    return Scaler(mean, std)


def split_borders(partition, lookback: int, horizon: int, convention: str) -> list[int]:
    """Target-row borders ``[b0, b1, b2, b3]``; split k targets rows ``b_k .. b_{k+1}-1``."""
    a, b, c = (int(v) for v in partition)
    if convention == "rows":
        return [lookback, a, a + b, a + b + c]
    if convention == "windows":
        b1 = a + lookback + horizon - 1
        b2 = b1 + b + horizon - 1
        return [lookback, b1, b2, b2 + c + horizon - 1]
    raise DataError(f"unknown split convention {convention!r}")


def split_standardize_window(table: SeriesTable, lookback: int, horizon: int, partition,
                             convention: str = "windows") -> tuple[WindowedDataset, ...]:
    if lookback < 1 or horizon < 1:
        raise DataError(f"lookback and horizon must be positive (T={lookback}, P={horizon})")
    if any(int(v) < 1 for v in partition):
        raise DataError(f"partition entries must be positive, got {partition}")
    borders = split_borders(partition, lookback, horizon, convention)
    if borders[-1] > table.rows:
        raise DataError(f"partition {tuple(partition)} needs {borders[-1]} rows "
                        f"under the {convention!r} convention; table has {table.rows}")
    train_rows = borders[1]
    scaler = fit_scaler(table.values[:train_rows])
    values = scaler.transform(table.values)
    out = []
    for k, split in enumerate(("train", "val", "test")):
        lo, hi = max(borders[k], lookback), borders[k + 1]
        # first target row of window s is s + T; last is s + T + P - 1
        starts = np.arange(lo - lookback, hi - lookback - horizon + 1)
        if starts.size == 0:
            raise DataError(f"{split} split too short for one window (T={lookback}, P={horizon})")
        out.append(WindowedDataset(split, values, starts, lookback, horizon, scaler, (lo, hi)))
    return tuple(out)


def dataset_metadata(table: SeriesTable, partition, convention: str,
                     splits: tuple[WindowedDataset, ...]) -> dict:
    scaler = splits[0].scaler
    return {
        "name": table.name,
        "channels": table.n_channels,
        "rows": table.rows,
        "partition": list(partition),
        "convention": convention,
        "windows": {d.split: len(d) for d in splits},
        "scaler_mean": scaler.mean.tolist(),
        "scaler_std": scaler.std.tolist(),
    }


def synthetic(kind: str, rows: int, n_channels: int = 1, seed: int = 0, *,
              frequencies=None, noise: float = 0.0, lookback: int | None = None,
              horizon: int | None = None) -> SeriesTable:
    """Deterministic synthetic series with recorded ground truth.

    ``sine_mix`` sums sinusoids at the given normalized frequencies (cycles
    per row; drawn from a fixed menu when omitted), ``trend_plus_noise``
    draws one slope per channel, ``step`` holds random levels for random
    durations.
    """
    if kind not in SYNTHETIC_KINDS:
        raise DataError(f"unknown synthetic kind {kind!r}; choose from {SYNTHETIC_KINDS}")
    if lookback is not None and horizon is not None and rows < 4 * (lookback + horizon):
        raise DataError(f"rows={rows} must be at least 4*(T+P) = {4 * (lookback + horizon)}")
    rng = np.random.default_rng(seed)
    t = np.arange(rows, dtype=np.float64)
    values = np.empty((rows, n_channels))
    meta: dict = {"kind": kind, "seed": seed, "noise": noise}
    if kind == "sine_mix":
        per_channel = []
        for ch in range(n_channels):
            if frequencies is None:
                menu = np.array([1 / 48, 1 / 24, 1 / 12, 0.1, 0.25])
                freqs = np.sort(rng.choice(menu, size=2, replace=False))
            else:
                freqs = np.atleast_1d(np.asarray(frequencies, dtype=np.float64))
            amps = rng.uniform(0.5, 1.5, size=freqs.size)
            phases = rng.uniform(0, 2 * np.pi, size=freqs.size)
            values[:, ch] = (amps[:, None] * np.cos(2 * np.pi * freqs[:, None] * t + phases[:, None])).sum(0)
            per_channel.append({"frequencies": freqs.tolist(), "amplitudes": amps.tolist(),
                                "phases": phases.tolist()})
        meta["components"] = per_channel
    elif kind == "trend_plus_noise":
        slopes = rng.uniform(-0.01, 0.01, size=n_channels)
        offsets = rng.normal(size=n_channels)
        values[:] = offsets + slopes * t[:, None]
        meta["slopes"] = slopes.tolist()
        meta["offsets"] = offsets.tolist()
    else:
        for ch in range(n_channels):
            level, pos = rng.normal(), 0
            while pos < rows:
                run = int(rng.integers(20, 200))
                values[pos:pos + run, ch] = level
                level = rng.normal()
                pos += run
    if noise:
        values += noise * rng.standard_normal(values.shape)
    names = [f"ch{i}" for i in range(n_channels)]
    return SeriesTable(f"synthetic_{kind}", names, values, "step", metadata=meta)
