"""Optimization-based poisoning of the regression training set.

The attacker owns a small fraction of training rows and moves them inside
the [0,1] box to maximize the trained model's error on a clean evaluation
set. The outer ascent differentiates through the inner training problem:
for OLS/ridge the trained parameters are an implicit function of the data
via the normal-equation stationarity conditions; for lasso the same system
is restricted to the nonzero-coefficient coordinates. A backtracking line
search retrains after every trial step and only accepts steps that do not
decrease the clean-set loss, so the recorded loss trajectory is
non-decreasing by construction.

White-box attackers work on the real training set; black-box attackers
never touch it and use a surrogate sample drawn from a disjoint pool.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .errors import ConfigError
from .regress import (
    LinearModel,
    TrainConfig,
    fit,
    fit_lasso,
    mse,
    predict,
)

MAX_RATE = 0.25

_FD_STEP = 1e-5


@dataclass(frozen=True)
class PoisonConfig:
    rate: float = 0.10  # fraction of the training set the attacker controls
    tol: float = 1e-6  # stop when the clean-set loss change drops below this
    max_outer_iter: int = 50
    initial_step: float = 0.05
    shrink_factor: float = 0.5
    max_halvings: int = 10
    mode: str = "white-box"  # or "black-box"
    optimize_response: bool = False  # pseudocode moves features only
    seed: int = 0

    def validate(self) -> None:
        if not (0.0 < self.rate <= MAX_RATE):
            raise ConfigError(f"rate must be in (0, {MAX_RATE}], got {self.rate}")
        if self.tol <= 0:
            raise ConfigError("tol must be positive")
        if self.max_outer_iter < 1:
            raise ConfigError("max_outer_iter must be >= 1")
        if self.initial_step <= 0 or not (0.0 < self.shrink_factor < 1.0):
            raise ConfigError("bad line search parameters")
        if self.max_halvings < 0:
            raise ConfigError("max_halvings must be >= 0")
        if self.mode not in ("white-box", "black-box"):
            raise ConfigError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class PoisonSet:
    """The attacker's crafted rows plus the attack's loss history."""

    X: np.ndarray  # (p, d), every entry in [0,1]
    y: np.ndarray  # (p,), in [0,1]
    provenance: tuple[str, ...]
    loss_trajectory: np.ndarray = field(repr=False)
    fd_fallback_iterations: tuple[int, ...] = ()

    def __len__(self) -> int:
        return self.X.shape[0]

    @classmethod
    def empty(cls, n_features: int) -> "PoisonSet":
        return cls(
            X=np.zeros((0, n_features)),
            y=np.zeros(0),
            provenance=(),
            loss_trajectory=np.zeros(0),
        )

    def save_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            d = self.X.shape[1]
            writer.writerow([f"x{j}" for j in range(d)] + ["y", "provenance"])
            for k in range(len(self)):
                writer.writerow(
                    [repr(float(v)) for v in self.X[k]]
                    + [repr(float(self.y[k])), self.provenance[k]]
                )

    def save_trajectory(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps([float(v) for v in self.loss_trajectory]) + "\n"
        )


@dataclass(frozen=True)
class AttackerKnowledge:
    """What the attacker can see: the real training set or a surrogate."""

    mode: str  # "white-box" | "black-box"
    training_set: Dataset  # true S_tr (white-box) or the surrogate (black-box)
    learner: str
    lam: float
    params: LinearModel  # known exactly or estimated on the surrogate


def white_box_knowledge(train: Dataset, learner: str, lam: float = 0.0,
                        train_cfg: TrainConfig | None = None) -> AttackerKnowledge:
    params = fit(learner, train.X, train.y, lam, train_cfg)
    return AttackerKnowledge(
        mode="white-box", training_set=train, learner=learner, lam=lam, params=params
    )


def build_blackbox_surrogate(
    pool: Dataset,
    seed: int,
    learner: str = "ols",
    lam: float = 0.0,
    size: int | None = None,
    train_cfg: TrainConfig | None = None,
) -> AttackerKnowledge:
    """Sample a surrogate training set from a pool disjoint from true S_tr.

    The attacker's parameter estimate comes from fitting the learner on the
    surrogate alone.
    """
    if len(pool) < 50:
        raise ConfigError(f"surrogate pool too small: {len(pool)} rows (< 50)")
    if size is None:
        size = max(50, int(0.8 * len(pool)))
    if size > len(pool):
        raise ConfigError(f"surrogate size {size} exceeds pool of {len(pool)}")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(pool), size=size, replace=False))
    surrogate = Dataset(X=pool.X[idx].copy(), y=pool.y[idx].copy())
    params = fit(learner, surrogate.X, surrogate.y, lam, train_cfg)
    return AttackerKnowledge(
        mode="black-box",
        training_set=surrogate,
        learner=learner,
        lam=lam,
        params=params,
    )


def init_poison_points(train: Dataset, p: int, seed: int) -> PoisonSet:
    """Seed points: sample training rows and flip responses y <- 1 - y."""
    n = len(train)
    if n == 0:
        raise ConfigError("cannot initialize poison points from an empty set")
    if p < 1:
        raise ConfigError("poison point count must be >= 1")
    if p >= n:
        raise ConfigError(
            f"{p} poison points with {n} training rows violates the majority-clean bound"
        )
    rng = np.random.default_rng(seed)
    idx = rng.choice(n, size=p, replace=False)
    X = np.clip(train.X[idx].copy(), 0.0, 1.0)
    y = np.clip(1.0 - train.y[idx], 0.0, 1.0)
    provenance = tuple(f"base_row={int(i)};response_flipped" for i in idx)
    return PoisonSet(X=X, y=y, provenance=provenance, loss_trajectory=np.zeros(0))


def apply_poison(train: Dataset, poison: PoisonSet) -> Dataset:
    """Concatenate poison rows onto the training set (identity when empty)."""
    if len(poison) == 0:
        return train
    if poison.X.shape[1] != train.X.shape[1]:
        raise ConfigError("poison feature width does not match the training set")
    return Dataset(
        X=np.vstack([train.X, poison.X]), y=np.concatenate([train.y, poison.y])
    )


def loss_on_clean(model: LinearModel, clean: Dataset) -> float:
    """The attacker's objective: MSE of the trained model on untainted data."""
    if len(clean) == 0:
        raise ConfigError("clean evaluation set is empty")
    return mse(predict(model, clean.X), clean.y)


# ---------------------------------------------------------------------------
# Gradient of the clean-set loss through the retrained parameters.

def _clean_loss_param_gradient(model: LinearModel, clean: Dataset,
                               active: np.ndarray) -> np.ndarray:
    r = predict(model, clean.X) - clean.y
    m = len(clean)
    g = np.empty(active.size + 1)
    g[:-1] = 2.0 * clean.X[:, active].T @ r / m
    g[-1] = 2.0 * r.mean()
    return g


def _implicit_gradient(
    K: np.ndarray,
    active: np.ndarray,
    x_c: np.ndarray,
    y_c: float,
    model: LinearModel,
    clean: Dataset,
    n_total: int,
) -> tuple[np.ndarray, float]:
    """Solve the stationarity system for d(loss)/d(x_c, y_c).

    ``K`` is the (|active|+1) square matrix of second derivatives of the
    inner objective at its optimum; raises LinAlgError when singular so the
    caller can fall back to finite differences.
    """
    dA = active.size
    w_a = model.w[active]
    x_a = x_c[active]
    r_c = float(x_c @ model.w + model.b - y_c)

    g_theta = _clean_loss_param_gradient(model, clean, active)
    z = np.linalg.solve(K, g_theta)
    if not np.all(np.isfinite(z)):
        raise np.linalg.LinAlgError("implicit system produced non-finite solve")

    # d(stationarity)/dx_c, stacked (dA+1) x dA, and /dy_c, length dA+1
    M = np.empty((dA + 1, dA))
    M[:dA] = (r_c * np.eye(dA) + np.outer(x_a, w_a)) / n_total
    M[dA] = w_a / n_total

    g_x = np.zeros(x_c.shape[0])
    g_x[active] = -M.T @ z
    g_y = float((x_a @ z[:dA] + z[dA]) / n_total)
    return g_x, g_y


def _stationarity_matrix(X: np.ndarray, model: LinearModel) -> tuple[np.ndarray, np.ndarray]:
    """Curvature matrix of the inner problem and the active coordinate set."""
    n = X.shape[0]
    if model.regularizer == "lasso":
        active = np.flatnonzero(model.w)
        lam_eff = 0.0  # the l1 subgradient is locally constant on the active set
    else:
        active = np.arange(X.shape[1])
        lam_eff = model.lam if model.regularizer == "ridge" else 0.0
    Xa = X[:, active]
    dA = active.size
    K = np.empty((dA + 1, dA + 1))
    K[:dA, :dA] = Xa.T @ Xa / n + lam_eff * np.eye(dA)
    K[:dA, dA] = Xa.mean(axis=0) if n else 0.0
    K[dA, :dA] = K[:dA, dA]
    K[dA, dA] = 1.0
    return K, active


def _fd_gradient(
    x_c: np.ndarray,
    y_c: float,
    model: LinearModel,
    train_plus_poison: Dataset,
    clean: Dataset,
    step: float = _FD_STEP,
) -> tuple[np.ndarray, float]:
    """Central finite differences with a full refit per probe."""
    learner = "ols" if model.regularizer == "none" else model.regularizer
    X = train_plus_poison.X
    y = train_plus_poison.y
    matches = np.flatnonzero((X == x_c).all(axis=1) & (y == y_c))
    if matches.size == 0:
        raise ConfigError("poison point not found in train_plus_poison")
    k = int(matches[0])

    def lf_at(x_probe, y_probe):
        Xp = X.copy()
        yp = y.copy()
        Xp[k] = x_probe
        yp[k] = y_probe
        return loss_on_clean(fit(learner, Xp, yp, model.lam), clean)

    g_x = np.empty(x_c.shape[0])
    for j in range(x_c.shape[0]):
        hi = x_c.copy()
        lo = x_c.copy()
        hi[j] += step
        lo[j] -= step
        g_x[j] = (lf_at(hi, y_c) - lf_at(lo, y_c)) / (2 * step)
    g_y = (lf_at(x_c, y_c + step) - lf_at(x_c, y_c - step)) / (2 * step)
    return g_x, g_y


def poison_gradient(
    x_c: np.ndarray,
    y_c: float,
    model: LinearModel,
    train_plus_poison: Dataset,
    clean: Dataset,
) -> tuple[np.ndarray, float, bool]:
    """d(clean loss)/d(x_c, y_c) assuming ``model`` is the inner optimum.

    Returns (gradient over features, gradient over response, used_fallback);
    a singular implicit system falls back to finite differences.
    """
    K, active = _stationarity_matrix(train_plus_poison.X, model)
    try:
        g_x, g_y = _implicit_gradient(
            K, active, np.asarray(x_c, dtype=np.float64), float(y_c),
            model, clean, len(train_plus_poison),
        )
        return g_x, g_y, False
    except np.linalg.LinAlgError:
        g_x, g_y = _fd_gradient(np.asarray(x_c, dtype=np.float64), float(y_c),
                                model, train_plus_poison, clean)
        return g_x, g_y, True


# ---------------------------------------------------------------------------
# Inner-problem trainers with cheap single-point replacement.

class _QuadraticTrainer:
    """OLS/ridge refits via maintained normal equations.

    Replacing one poison row is a rank-two update of the augmented Gram
    matrix; the Gram is rebuilt from scratch on refresh() to cap rounding
    drift.
    """

    def __init__(self, base: Dataset, poison_X, poison_y, learner: str, lam: float):
        self.learner = learner
        self.lam = lam if learner == "ridge" else 0.0
        self.d = base.X.shape[1]
        A = np.hstack([base.X, np.ones((len(base), 1))])
        self._K_base = A.T @ A
        self._m_base = A.T @ base.y
        self._n_base = len(base)
        self.P_X = poison_X
        self.P_y = poison_y
        self.refresh()

    @property
    def n_total(self) -> int:
        return self._n_base + self.P_X.shape[0]

    @staticmethod
    def _aug(x: np.ndarray) -> np.ndarray:
        return np.append(x, 1.0)

    def refresh(self) -> None:
        self.K = self._K_base.copy()
        self.m = self._m_base.copy()
        for x, yv in zip(self.P_X, self.P_y):
            a = self._aug(x)
            self.K += np.outer(a, a)
            self.m += a * yv

    def replace(self, idx: int, x_new: np.ndarray, y_new: float) -> None:
        a_old = self._aug(self.P_X[idx])
        a_new = self._aug(x_new)
        self.K += np.outer(a_new, a_new) - np.outer(a_old, a_old)
        self.m += a_new * y_new - a_old * self.P_y[idx]
        self.P_X[idx] = x_new
        self.P_y[idx] = y_new

    def fit(self) -> LinearModel:
        N = self.n_total
        M = self.K / N
        if self.lam:
            M = M + self.lam * np.diag([1.0] * self.d + [0.0])
        rhs = self.m / N
        try:
            theta = np.linalg.solve(M, rhs)
            if not np.all(np.isfinite(theta)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            theta = np.linalg.pinv(M) @ rhs
        reg = "ridge" if self.learner == "ridge" else "none"
        return LinearModel(w=theta[: self.d], b=float(theta[self.d]),
                           regularizer=reg, lam=self.lam)

    def stationarity_matrix(self, model: LinearModel) -> tuple[np.ndarray, np.ndarray]:
        K = self.K / self.n_total
        if self.lam:
            K = K + self.lam * np.diag([1.0] * self.d + [0.0])
        return K, np.arange(self.d)


class _LassoTrainer:
    """Warm-started coordinate-descent refits on the combined matrix."""

    def __init__(self, base: Dataset, poison_X, poison_y, lam: float,
                 train_cfg: TrainConfig | None):
        self._n_base = len(base)
        self.X = np.vstack([base.X, poison_X])
        self.y = np.concatenate([base.y, poison_y])
        self.lam = lam
        self.cfg = train_cfg or TrainConfig()
        self._warm: np.ndarray | None = None
        self.P_X = poison_X
        self.P_y = poison_y

    @property
    def n_total(self) -> int:
        return self.X.shape[0]

    def refresh(self) -> None:
        pass

    def replace(self, idx: int, x_new: np.ndarray, y_new: float) -> None:
        self.X[self._n_base + idx] = x_new
        self.y[self._n_base + idx] = y_new
        self.P_X[idx] = x_new
        self.P_y[idx] = y_new

    def fit(self) -> LinearModel:
        model = fit_lasso(self.X, self.y, self.lam, self.cfg, warm_start=self._warm)
        self._warm = model.w
        return model

    def stationarity_matrix(self, model: LinearModel) -> tuple[np.ndarray, np.ndarray]:
        return _stationarity_matrix(self.X, model)


def _make_trainer(base: Dataset, poison: PoisonSet, knowledge: AttackerKnowledge,
                  train_cfg: TrainConfig | None):
    P_X = poison.X.copy()
    P_y = poison.y.copy()
    if knowledge.learner == "lasso":
        return _LassoTrainer(base, P_X, P_y, knowledge.lam, train_cfg)
    return _QuadraticTrainer(base, P_X, P_y, knowledge.learner, knowledge.lam)


def run_poisoning_attack(
    train: Dataset,
    clean_validation: Dataset,
    knowledge: AttackerKnowledge,
    cfg: PoisonConfig,
    train_cfg: TrainConfig | None = None,
) -> PoisonSet:
    """Projected line-search ascent of the clean-set loss over poison rows.

    The poison budget is rate * len(train); all optimization reads go to
    ``knowledge.training_set``, which in black-box mode is the surrogate,
    never the defender's real rows.
    """
    cfg.validate()
    if cfg.mode != knowledge.mode:
        raise ConfigError(
            f"config mode {cfg.mode!r} does not match knowledge mode {knowledge.mode!r}"
        )
    p = int(cfg.rate * len(train))
    if p < 1:
        raise ConfigError(
            f"rate {cfg.rate} yields no poison points for {len(train)} training rows"
        )

    base = knowledge.training_set
    poison = init_poison_points(base, min(p, len(base) - 1), cfg.seed)
    trainer = _make_trainer(base, poison, knowledge, train_cfg)

    model = trainer.fit()
    lf_current = loss_on_clean(model, clean_validation)
    trajectory = [lf_current]
    fallback_iters: list[int] = []

    for outer in range(1, cfg.max_outer_iter + 1):
        trainer.refresh()
        used_fallback = False
        for c in range(len(poison)):
            x_c = trainer.P_X[c].copy()
            y_c = float(trainer.P_y[c])
            combined = Dataset(X=None, y=None)  # placeholder, replaced below
            try:
                K, active = trainer.stationarity_matrix(model)
                g_x, g_y = _implicit_gradient(
                    K, active, x_c, y_c, model, clean_validation, trainer.n_total
                )
            except np.linalg.LinAlgError:
                combined = Dataset(
                    X=np.vstack([base.X, trainer.P_X]),
                    y=np.concatenate([base.y, trainer.P_y]),
                )
                g_x, g_y = _fd_gradient(x_c, y_c, model, combined, clean_validation)
                used_fallback = True

            if cfg.optimize_response:
                direction = np.append(g_x, g_y)
            else:
                direction = g_x
            norm = float(np.linalg.norm(direction))
            if norm == 0.0 or not math.isfinite(norm):
                continue
            direction = direction / norm

            step = cfg.initial_step
            for _ in range(cfg.max_halvings + 1):
                x_try = np.clip(x_c + step * direction[: x_c.size], 0.0, 1.0)
                y_try = y_c
                if cfg.optimize_response:
                    y_try = float(np.clip(y_c + step * direction[-1], 0.0, 1.0))
                trainer.replace(c, x_try, y_try)
                cand_model = trainer.fit()
                lf_cand = loss_on_clean(cand_model, clean_validation)
                if lf_cand >= lf_current:
                    lf_current = lf_cand
                    model = cand_model
                    break
                trainer.replace(c, x_c, y_c)
                step *= cfg.shrink_factor
            else:
                model = trainer.fit()  # state restored; refresh the model handle

        if used_fallback:
            fallback_iters.append(outer)
        trajectory.append(lf_current)
        if abs(trajectory[-1] - trajectory[-2]) < cfg.tol:
            break

    return PoisonSet(
        X=trainer.P_X.copy(),
        y=trainer.P_y.copy(),
        provenance=poison.provenance,
        loss_trajectory=np.asarray(trajectory),
        fd_fallback_iterations=tuple(fallback_iters),
    )
