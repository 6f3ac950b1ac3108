"""Ingestion, normalization, and splitting of appliance energy data.

The on-disk input is a CSV in the layout of the UCI appliances energy file:
a header row, an optional ``date`` column ("YYYY-MM-DD HH:MM:SS", 10-minute
cadence), a watt-hour target column, and numeric sensor/weather channels.
Everything downstream works on min-max normalized matrices, so this module
owns the normalization parameters and the train/validation/test assignment.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DatasetError

TRAIN, VALIDATION, TEST = 0, 1, 2
_SPLIT_NAMES = {"train": TRAIN, "validation": VALIDATION, "test": TEST}

DATE_COLUMN = "date"


@dataclass(frozen=True)
class RawFrame:
    """Parsed CSV contents: numeric channels plus the target, rows intact."""

    columns: tuple[str, ...]
    data: np.ndarray  # (n, p) float64, column order as in the file header
    target: np.ndarray  # (n,) float64
    target_name: str
    timestamps: tuple[str, ...] | None
    n_rejected: int

    def __len__(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class SplitSpec:
    """How to carve the frame into train/validation/test."""

    train_fraction: float = 0.70
    validation_fraction: float = 0.15
    test_fraction: float = 0.15
    seed: int = 0
    mode: str = "random-shuffle"  # or "chronological"

    def validate(self) -> None:
        fracs = (self.train_fraction, self.validation_fraction, self.test_fraction)
        if any(f <= 0 for f in fracs):
            raise ConfigError(f"split fractions must be positive, got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-12:
            raise ConfigError(f"split fractions must sum to 1, got {sum(fracs)!r}")
        if self.mode not in ("random-shuffle", "chronological"):
            raise ConfigError(f"unknown split mode {self.mode!r}")


@dataclass(frozen=True)
class NormalizationParams:
    """Per-column min-max fit on the training rows only."""

    feature_min: np.ndarray  # (p,)
    feature_max: np.ndarray  # (p,)
    target_min: float
    target_max: float
    constant_features: tuple[int, ...] = ()  # columns with max == min on train


@dataclass(frozen=True)
class Dataset:
    """A plain (features, response) pair used by fitters and attacks."""

    X: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class DataFrameNorm:
    """Normalized design matrix + target with split labels attached.

    Training rows are guaranteed to lie in [0,1]; validation/test rows are
    clipped into [0,1] so the box constraint used by the poisoning attack
    stays meaningful.
    """

    X: np.ndarray  # (n, p) in [0,1]
    y: np.ndarray  # (n,) in [0,1]
    columns: tuple[str, ...]
    params: NormalizationParams
    split: np.ndarray = field(repr=False)  # (n,) int8 labels

    @property
    def shape(self) -> tuple[int, int]:
        return self.X.shape

    def mask(self, which: str) -> np.ndarray:
        return self.split == _SPLIT_NAMES[which]

    def subset(self, which: str) -> Dataset:
        m = self.mask(which)
        return Dataset(X=self.X[m], y=self.y[m])

    def restrict(self, which: str) -> "DataFrameNorm":
        """A new frame containing only the rows of one split."""
        m = self.mask(which)
        return replace(self, X=self.X[m], y=self.y[m], split=self.split[m])

    def with_features(self, X_new: np.ndarray) -> "DataFrameNorm":
        if X_new.shape != self.X.shape:
            raise DatasetError(
                f"replacement feature block has shape {X_new.shape}, expected {self.X.shape}"
            )
        return replace(self, X=X_new)


def load_csv(path: str | Path, target_column: str) -> RawFrame:
    """Parse a CSV into a RawFrame, rejecting rows with unparseable cells.

    The ``date`` column, when present, is kept as timestamps but excluded
    from the numeric channels. Raises DatasetError for a missing file,
    missing target column, or zero parseable rows.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"empty file: {path}") from None
        header = [h.strip() for h in header]
        if target_column not in header:
            raise DatasetError(f"missing target column {target_column!r} in {path}")

        date_idx = header.index(DATE_COLUMN) if DATE_COLUMN in header else None
        target_idx = header.index(target_column)
        feature_idx = [
            i for i in range(len(header)) if i != target_idx and i != date_idx
        ]
        columns = tuple(header[i] for i in feature_idx)

        rows: list[list[float]] = []
        targets: list[float] = []
        stamps: list[str] = []
        n_rejected = 0
        arity = len(header)
        for raw in reader:
            if len(raw) != arity:
                n_rejected += 1
                continue
            try:
                vals = [float(raw[i]) for i in feature_idx]
                tgt = float(raw[target_idx])
            except ValueError:
                n_rejected += 1
                continue
            rows.append(vals)
            targets.append(tgt)
            if date_idx is not None:
                stamps.append(raw[date_idx])

    if not rows:
        raise DatasetError(f"no parseable rows in {path} ({n_rejected} rejected)")
    return RawFrame(
        columns=columns,
        data=np.asarray(rows, dtype=np.float64),
        target=np.asarray(targets, dtype=np.float64),
        target_name=target_column,
        timestamps=tuple(stamps) if date_idx is not None else None,
        n_rejected=n_rejected,
    )


def assign_split(n: int, spec: SplitSpec) -> np.ndarray:
    """Deterministic per-row split labels for ``n`` rows.

    Sizes are the rounded fractions (within one row of exact); in
    random-shuffle mode the assignment is a seeded permutation, in
    chronological mode the file order is kept.
    """
    spec.validate()
    if n <= 0:
        raise DatasetError("cannot split an empty frame")
    n_train = int(round(spec.train_fraction * n))
    n_val = int(round(spec.validation_fraction * n))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)

    labels = np.empty(n, dtype=np.int8)
    order = (
        np.random.default_rng(spec.seed).permutation(n)
        if spec.mode == "random-shuffle"
        else np.arange(n)
    )
    labels[order[:n_train]] = TRAIN
    labels[order[n_train : n_train + n_val]] = VALIDATION
    labels[order[n_train + n_val :]] = TEST
    return labels


def normalize_split(frame: RawFrame, spec: SplitSpec) -> DataFrameNorm:
    """Min-max normalize to [0,1] with parameters fit on training rows only.

    Columns that are constant on the training split map to 0.0 and are
    flagged in the returned params. Validation/test values outside the
    training range are clipped to [0,1].
    """
    if len(frame) == 0:
        raise DatasetError("cannot normalize an empty frame")
    split = assign_split(len(frame), spec)
    train_mask = split == TRAIN

    Xt = frame.data[train_mask]
    lo = Xt.min(axis=0)
    hi = Xt.max(axis=0)
    constant = np.flatnonzero(hi <= lo)
    span = np.where(hi > lo, hi - lo, 1.0)

    X = (frame.data - lo) / span
    X[:, constant] = 0.0
    np.clip(X, 0.0, 1.0, out=X)

    yt = frame.target[train_mask]
    t_lo = float(yt.min())
    t_hi = float(yt.max())
    if t_hi <= t_lo:
        raise DatasetError("target is constant on the training split")
    y = np.clip((frame.target - t_lo) / (t_hi - t_lo), 0.0, 1.0)

    params = NormalizationParams(
        feature_min=lo,
        feature_max=hi,
        target_min=t_lo,
        target_max=t_hi,
        constant_features=tuple(int(c) for c in constant),
    )
    return DataFrameNorm(
        X=X, y=y, columns=frame.columns, params=params, split=split
    )


def normalize_target(value_wh: float, params: NormalizationParams) -> float:
    if params.target_max <= params.target_min:
        raise DatasetError("target normalization is degenerate (max == min)")
    return (value_wh - params.target_min) / (params.target_max - params.target_min)


def denormalize_target(value: float, params: NormalizationParams) -> float:
    """Map a normalized prediction back to watt-hours."""
    if params.target_max <= params.target_min:
        raise DatasetError("target normalization is degenerate (max == min)")
    return value * (params.target_max - params.target_min) + params.target_min


# ---------------------------------------------------------------------------
# Frame serialization (.npz) used by the CLI to pass intermediate artifacts.

def save_frame(frame: DataFrameNorm, path: str | Path) -> None:
    meta = {
        "columns": list(frame.columns),
        "constant_features": list(frame.params.constant_features),
        "target_min": frame.params.target_min,
        "target_max": frame.params.target_max,
    }
    np.savez(
        path,
        X=frame.X,
        y=frame.y,
        split=frame.split,
        feature_min=frame.params.feature_min,
        feature_max=frame.params.feature_max,
        meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
    )


def load_frame(path: str | Path) -> DataFrameNorm:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"frame file not found: {path}")
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        params = NormalizationParams(
            feature_min=z["feature_min"],
            feature_max=z["feature_max"],
            target_min=float(meta["target_min"]),
            target_max=float(meta["target_max"]),
            constant_features=tuple(meta["constant_features"]),
        )
        return DataFrameNorm(
            X=z["X"],
            y=z["y"],
            columns=tuple(meta["columns"]),
            params=params,
            split=z["split"],
        )


# ---------------------------------------------------------------------------
# Synthetic stand-in for the UCI appliances file, for demos and offline tests.

_UCI_SENSOR_COLUMNS = (
    ["lights"]
    + [c for i in range(1, 10) for c in (f"T{i}", f"RH_{i}")]
    + ["T_out", "Press_mm_hg", "RH_out", "Windspeed", "Visibility", "Tdewpoint", "rv1", "rv2"]
)


def write_synthetic_appliances_csv(
    path: str | Path, n_rows: int = 2000, seed: int = 0
) -> Path:
    """Write a CSV with the UCI appliances schema and correlated channels.

    Room temperatures share a weather driver and humidities move against
    them, so the feature block has low effective rank like the real sensor
    network. Intended for offline runs; it is not the published dataset.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(n_rows)
    day = 2.0 * np.pi * t / 144.0  # 10-minute cadence, 144 samples/day
    weather = 5.0 * np.sin(day) + np.cumsum(rng.normal(0, 0.05, n_rows))

    cols: dict[str, np.ndarray] = {}
    cols["lights"] = rng.choice([0.0, 10.0, 20.0, 30.0, 40.0], n_rows, p=[0.55, 0.2, 0.12, 0.08, 0.05])
    for i in range(1, 10):
        cols[f"T{i}"] = 20.0 + 0.6 * weather + rng.normal(0, 0.4, n_rows) + 0.3 * i
        cols[f"RH_{i}"] = 40.0 - 1.2 * weather + rng.normal(0, 1.0, n_rows) + 0.5 * i
    cols["T_out"] = 8.0 + weather + rng.normal(0, 0.5, n_rows)
    cols["Press_mm_hg"] = 755.0 + 0.8 * np.cos(day / 7.0) + rng.normal(0, 0.3, n_rows)
    cols["RH_out"] = 75.0 - 2.0 * weather + rng.normal(0, 2.0, n_rows)
    cols["Windspeed"] = np.abs(4.0 + 2.0 * np.sin(day / 3.0) + rng.normal(0, 1.0, n_rows))
    cols["Visibility"] = 40.0 + rng.normal(0, 5.0, n_rows)
    cols["Tdewpoint"] = 4.0 + 0.7 * weather + rng.normal(0, 0.5, n_rows)
    cols["rv1"] = rng.uniform(0, 50, n_rows)
    cols["rv2"] = cols["rv1"].copy()

    occupancy = 1.0 + np.maximum(0.0, np.sin(day - 1.0))
    appliances = (
        55.0
        + 3.0 * cols["lights"]
        + 6.0 * occupancy * (cols["T1"] - cols["T1"].min())
        + rng.gamma(2.0, 12.0, n_rows)
    )
    appliances = np.round(appliances / 10.0) * 10.0

    base = np.datetime64("2016-01-11T17:00:00")
    stamps = base + (t * 600).astype("timedelta64[s]")

    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "Appliances"] + _UCI_SENSOR_COLUMNS)
        for k in range(n_rows):
            stamp = str(stamps[k]).replace("T", " ")
            writer.writerow(
                [stamp, f"{appliances[k]:.0f}"]
                + [f"{cols[c][k]:.6g}" for c in _UCI_SENSOR_COLUMNS]
            )
    return path
