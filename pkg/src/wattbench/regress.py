"""Linear regression fitters (OLS, ridge, lasso) and the MSE metric.

All three fitters minimize objectives of the form

    (1/n) * sum((y - Xw - b)^2)  +  penalty(w)

with the bias never regularized. They are deterministic: the same inputs
produce a bit-identical model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError

LEARNERS = ("ols", "ridge", "lasso")

DEFAULT_RIDGE_LAMBDA = 0.01
DEFAULT_LASSO_LAMBDA = 0.001


@dataclass(frozen=True)
class LinearModel:
    w: np.ndarray
    b: float
    regularizer: str  # "none" | "ridge" | "lasso"
    lam: float = 0.0
    converged: bool = True
    n_iter: int = 0

    def __post_init__(self):
        if self.regularizer == "none" and self.lam != 0.0:
            raise ConfigError("lam must be 0 when regularizer is none")
        if self.lam < 0:
            raise ConfigError("lam must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.0
    lasso_max_iter: int = 10_000
    lasso_tol: float = 1e-8
    ridge_bias_regularized: bool = False  # fixed; kept explicit for the record

    def validate(self) -> None:
        if self.lasso_max_iter < 1:
            raise ConfigError("lasso_max_iter must be >= 1")
        if self.lasso_tol <= 0:
            raise ConfigError("lasso_tol must be positive")
        if self.ridge_bias_regularized:
            raise ConfigError("regularizing the bias is not supported")


def _check_xy(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2:
        raise ConfigError(f"X must be 2-D, got shape {X.shape}")
    if y.ndim != 1 or y.shape[0] != X.shape[0]:
        raise ConfigError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
    if X.shape[0] == 0:
        raise ConfigError("cannot fit on empty data")
    return X, y


def fit_ols(X: np.ndarray, y: np.ndarray) -> LinearModel:
    """Least squares with a bias column; minimum-norm solution if singular."""
    X, y = _check_xy(X, y)
    A = np.hstack([X, np.ones((X.shape[0], 1))])
    theta, *_ = np.linalg.lstsq(A, y, rcond=None)
    return LinearModel(w=theta[:-1], b=float(theta[-1]), regularizer="none")


def fit_ridge(X: np.ndarray, y: np.ndarray, lam: float) -> LinearModel:
    """Minimize MSE + lam*||w||_2^2 on centered data, bias unregularized."""
    X, y = _check_xy(X, y)
    if lam < 0:
        raise ConfigError("lam must be non-negative")
    n, d = X.shape
    xm = X.mean(axis=0)
    ym = y.mean()
    Xc = X - xm
    yc = y - ym
    G = Xc.T @ Xc / n + lam * np.eye(d)
    rhs = Xc.T @ yc / n
    try:
        w = np.linalg.solve(G, rhs)
        if not np.all(np.isfinite(w)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        # poisoned data can make columns collinear; fall back to minimum norm
        w = np.linalg.pinv(G) @ rhs
    return LinearModel(
        w=w, b=float(ym - xm @ w), regularizer="ridge", lam=float(lam)
    )


def fit_lasso(
    X: np.ndarray, y: np.ndarray, lam: float, cfg: TrainConfig | None = None
) -> LinearModel:
    """Minimize MSE + lam*||w||_1 by cyclic coordinate descent.

    Converged when the largest coordinate change in a sweep drops below
    ``cfg.lasso_tol``; hitting ``cfg.lasso_max_iter`` is not an error, the
    model is returned with converged=False.
    """
    X, y = _check_xy(X, y)
    if lam < 0:
        raise ConfigError("lam must be non-negative")
    cfg = cfg or TrainConfig()
    cfg.validate()
    n, d = X.shape
    xm = X.mean(axis=0)
    ym = y.mean()
    Xc = X - xm
    yc = y - ym
    col_sq = np.einsum("ij,ij->j", Xc, Xc)  # ||Xc_j||^2 per column

    w = np.zeros(d)
    resid = yc.copy()  # yc - Xc @ w, maintained incrementally
    thresh = n * lam / 2.0
    converged = False
    sweep = 0
    for sweep in range(1, cfg.lasso_max_iter + 1):
        max_delta = 0.0
        for j in range(d):
            if col_sq[j] <= 0.0:
                continue  # constant column stays at zero weight
            wj_old = w[j]
            rho = Xc[:, j] @ resid + col_sq[j] * wj_old
            wj_new = np.sign(rho) * max(abs(rho) - thresh, 0.0) / col_sq[j]
            if wj_new != wj_old:
                resid += Xc[:, j] * (wj_old - wj_new)
                w[j] = wj_new
                max_delta = max(max_delta, abs(wj_new - wj_old))
        if max_delta < cfg.lasso_tol:
            converged = True
            break
    return LinearModel(
        w=w,
        b=float(ym - xm @ w),
        regularizer="lasso",
        lam=float(lam),
        converged=converged,
        n_iter=sweep,
    )


def fit(learner: str, X: np.ndarray, y: np.ndarray, lam: float = 0.0,
        cfg: TrainConfig | None = None) -> LinearModel:
    """Dispatch by learner name ("ols" | "ridge" | "lasso")."""
    if learner == "ols":
        return fit_ols(X, y)
    if learner == "ridge":
        return fit_ridge(X, y, lam)
    if learner == "lasso":
        return fit_lasso(X, y, lam, cfg)
    raise ConfigError(f"unknown learner {learner!r}")


def predict(model: LinearModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.w.shape[0]:
        raise ConfigError(
            f"X has shape {X.shape}, model expects {model.w.shape[0]} features"
        )
    return X @ model.w + model.b


def mse(predictions: np.ndarray, targets: np.ndarray) -> float:
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape or predictions.ndim != 1:
        raise ConfigError(
            f"shape mismatch: {predictions.shape} vs {targets.shape}"
        )
    if predictions.size == 0:
        raise ConfigError("mse of empty vectors is undefined")
    diff = predictions - targets
    return float(diff @ diff / diff.size)


def training_objective(model: LinearModel, X: np.ndarray, y: np.ndarray) -> float:
    """MSE plus the model's own penalty term, on the given data."""
    value = mse(predict(model, X), y)
    if model.regularizer == "ridge":
        value += model.lam * float(model.w @ model.w)
    elif model.regularizer == "lasso":
        value += model.lam * float(np.abs(model.w).sum())
    return value


def lasso_kkt_violation(model: LinearModel, X: np.ndarray, y: np.ndarray) -> float:
    """Worst subgradient-optimality violation of a fitted lasso model.

    Zero (within solver tolerance) at an exact optimum: for w_j = 0 the
    MSE gradient must lie in [-lam, lam]; otherwise it must equal
    -lam*sign(w_j).
    """
    X, y = _check_xy(X, y)
    n = X.shape[0]
    Xc = X - X.mean(axis=0)
    yc = y - y.mean()
    grad = -2.0 * Xc.T @ (yc - Xc @ model.w) / n
    active = model.w != 0.0
    viol_active = np.abs(grad[active] + model.lam * np.sign(model.w[active]))
    viol_zero = np.maximum(np.abs(grad[~active]) - model.lam, 0.0)
    worst = 0.0
    if viol_active.size:
        worst = max(worst, float(viol_active.max()))
    if viol_zero.size:
        worst = max(worst, float(viol_zero.max()))
    return worst


def save_model(model: LinearModel, path: str | Path) -> None:
    payload = {
        "w": [float(v) for v in model.w],
        "b": model.b,
        "regularizer": model.regularizer,
        "lam": model.lam,
        "converged": model.converged,
        "n_iter": model.n_iter,
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_model(path: str | Path) -> LinearModel:
    payload = json.loads(Path(path).read_text())
    return LinearModel(
        w=np.asarray(payload["w"], dtype=np.float64),
        b=float(payload["b"]),
        regularizer=payload["regularizer"],
        lam=float(payload["lam"]),
        converged=bool(payload["converged"]),
        n_iter=int(payload["n_iter"]),
    )
