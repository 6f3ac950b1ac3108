"""Sparse false-data injection on the sensor matrix during transit.

The attacker controls a fixed subset of sensor columns and adds a sparse
perturbation matrix to the stored measurements. Deltas are snapped so that
adding and then subtracting the attack restores the original matrix
bit-exactly in IEEE double arithmetic, which keeps the audit trail honest.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import DataFrameNorm
from .errors import ConfigError, DatasetError

MAX_RATE = 0.25  # higher poisoning fractions are outside the threat model


@dataclass(frozen=True)
class SensorAccessSet:
    """Indices of the feature columns the attacker can reach."""

    accessible: tuple[int, ...]

    def validate(self, n_columns: int) -> None:
        if not self.accessible:
            raise ConfigError("access set is empty")
        if len(set(self.accessible)) != len(self.accessible):
            raise ConfigError("access set has duplicate columns")
        if min(self.accessible) < 0 or max(self.accessible) >= n_columns:
            raise ConfigError(
                f"access set {self.accessible} out of range for {n_columns} columns"
            )

    @classmethod
    def from_column_names(
        cls, columns: tuple[str, ...], names: list[str]
    ) -> "SensorAccessSet":
        missing = [n for n in names if n not in columns]
        if missing:
            raise ConfigError(f"unknown sensor columns: {missing}")
        return cls(accessible=tuple(columns.index(n) for n in names))


@dataclass(frozen=True)
class FdiConfig:
    rate: float = 0.05  # fraction of matrix rows perturbed
    magnitude_range: tuple[float, float] = (0.1, 0.5)
    seed: int = 0
    mode: str = "row"  # "row": all accessible cells of chosen rows; "cell": single cells

    def validate(self) -> None:
        if not (0.0 < self.rate <= MAX_RATE):
            raise ConfigError(f"rate must be in (0, {MAX_RATE}], got {self.rate}")
        lo, hi = self.magnitude_range
        if not (0.0 <= lo <= hi):
            raise ConfigError(f"bad magnitude range {self.magnitude_range}")
        if self.mode not in ("row", "cell"):
            raise ConfigError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class AttackVector:
    """Sparse additive perturbation stored as (row, column, delta) triplets."""

    rows: np.ndarray  # int64
    cols: np.ndarray  # int64
    values: np.ndarray  # float64
    shape: tuple[int, int]

    def __post_init__(self):
        if not (len(self.rows) == len(self.cols) == len(self.values)):
            raise ConfigError("triplet arrays have mismatched lengths")
        coords = set(zip(self.rows.tolist(), self.cols.tolist()))
        if len(coords) != len(self.rows):
            raise ConfigError("attack support has duplicate cells")

    def __len__(self) -> int:
        return len(self.values)

    def to_dense(self) -> np.ndarray:
        D = np.zeros(self.shape)
        D[self.rows, self.cols] = self.values
        return D

    def support_columns(self) -> set[int]:
        return set(int(c) for c in self.cols)

    def save_csv(self, path: str | Path, columns: tuple[str, ...]) -> None:
        """Sparse-triplet audit format: row, column-name, delta (round-trips bit-exactly)."""
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row", "column", "delta"])
            writer.writerow(["#shape", self.shape[0], self.shape[1]])
            for r, c, v in zip(self.rows, self.cols, self.values):
                writer.writerow([int(r), columns[int(c)], repr(float(v))])

    @classmethod
    def load_csv(cls, path: str | Path, columns: tuple[str, ...]) -> "AttackVector":
        path = Path(path)
        if not path.exists():
            raise DatasetError(f"attack file not found: {path}")
        col_index = {name: i for i, name in enumerate(columns)}
        rows, cols, vals = [], [], []
        shape = None
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            next(reader)  # header
            for rec in reader:
                if rec[0] == "#shape":
                    shape = (int(rec[1]), int(rec[2]))
                    continue
                rows.append(int(rec[0]))
                cols.append(col_index[rec[1]])
                vals.append(float(rec[2]))
        if shape is None:
            raise DatasetError(f"attack file missing shape record: {path}")
        return cls(
            rows=np.asarray(rows, dtype=np.int64),
            cols=np.asarray(cols, dtype=np.int64),
            values=np.asarray(vals, dtype=np.float64),
            shape=shape,
        )


def _reversible_delta(base: float, delta: float) -> float:
    """Snap ``delta`` so that (base + d) - d == base holds exactly in floats."""
    s = base + delta
    d = s - base
    if base + d == s and s - d == base:
        return d
    # Nudge the poisoned value by ulps until the pair is consistent. Fails
    # only for subnormal-scale base values, which normalized data never has.
    for _ in range(64):
        s = math.nextafter(s, math.inf if delta > 0 else -math.inf)
        d = s - base
        if base + d == s and s - d == base:
            return d
    raise ConfigError(
        f"cannot build a reversible perturbation for cell value {base!r}"
    )


def build_attack_vector(
    frame: DataFrameNorm, access: SensorAccessSet, cfg: FdiConfig
) -> AttackVector:
    """Draw a seeded sparse attack restricted to the accessible columns.

    Row mode perturbs every accessible column of floor(rate*q) uniformly
    chosen rows, modeling a captured transmission frame; cell mode spreads
    floor(rate*q*p) single-cell hits over the accessible region.
    """
    cfg.validate()
    q, p = frame.shape
    access.validate(p)
    rng = np.random.default_rng(cfg.seed)
    lo, hi = cfg.magnitude_range
    acc = np.asarray(sorted(access.accessible), dtype=np.int64)

    if cfg.mode == "row":
        n_rows = int(cfg.rate * q)
        if n_rows < 1:
            raise ConfigError(
                f"attack too small to realize: rate {cfg.rate} selects 0 of {q} rows"
            )
        hit_rows = np.sort(rng.choice(q, size=n_rows, replace=False))
        rows = np.repeat(hit_rows, len(acc))
        cols = np.tile(acc, n_rows)
    else:
        n_cells = int(cfg.rate * q * p)
        if n_cells < 1:
            raise ConfigError("attack too small to realize: 0 cells selected")
        available = q * len(acc)
        if n_cells > available:
            raise ConfigError(
                f"rate {cfg.rate} needs {n_cells} cells but only {available} are accessible"
            )
        flat = np.sort(rng.choice(available, size=n_cells, replace=False))
        rows = flat // len(acc)
        cols = acc[flat % len(acc)]

    raw = rng.uniform(lo, hi, size=len(rows)) * rng.choice([-1.0, 1.0], size=len(rows))
    values = np.fromiter(
        (
            _reversible_delta(frame.X[r, c], d)
            for r, c, d in zip(rows, cols, raw)
        ),
        dtype=np.float64,
        count=len(rows),
    )
    return AttackVector(rows=rows, cols=cols, values=values, shape=(q, p))


def inject(frame: DataFrameNorm, attack: AttackVector) -> DataFrameNorm:
    """Apply the additive attack; the input frame is left untouched."""
    if attack.shape != frame.shape:
        raise ConfigError(
            f"attack shape {attack.shape} does not match frame {frame.shape}"
        )
    X = frame.X.copy()
    X[attack.rows, attack.cols] += attack.values
    return frame.with_features(X)


def remove(frame: DataFrameNorm, attack: AttackVector) -> DataFrameNorm:
    """Undo ``inject``; exact inverse thanks to the snapped deltas."""
    if attack.shape != frame.shape:
        raise ConfigError(
            f"attack shape {attack.shape} does not match frame {frame.shape}"
        )
    X = frame.X.copy()
    X[attack.rows, attack.cols] -= attack.values
    return frame.with_features(X)
