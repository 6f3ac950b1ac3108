"""Transit-level defense: low-rank + sparse recovery of the sensor matrix.

Solves  min_{s,i}  mu*||s||_* + mu*lam*||i||_1 + 0.5*||s + i - s_a||_F^2
with an accelerated proximal gradient scheme and continuation on mu. The
low-rank part is the cleaned sensor matrix, the sparse part the estimated
injection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attack_fdi import AttackVector
from .dataset import DataFrameNorm
from .errors import ConfigError


@dataclass(frozen=True)
class ApgConfig:
    lam: float | None = None  # sparsity weight; None -> 1/sqrt(max(q, p))
    eta: float = 0.9  # continuation factor
    mu0: float | None = None  # None -> 0.99 * largest singular value
    mu_bar: float | None = None  # smoothing floor; None -> 1e-9 * mu0
    max_iter: int = 500
    tol: float = 1e-7

    def validate(self) -> None:
        if not (0.0 < self.eta < 1.0):
            raise ConfigError(f"eta must be in (0,1), got {self.eta}")
        if self.lam is not None and self.lam <= 0:
            raise ConfigError("lam must be positive")
        if self.mu_bar is not None and self.mu_bar <= 0:
            raise ConfigError("mu_bar must be positive")
        if self.max_iter < 1 or self.tol <= 0:
            raise ConfigError("max_iter >= 1 and tol > 0 required")


@dataclass(frozen=True)
class RpcaResult:
    low_rank: np.ndarray
    sparse: np.ndarray
    iterations: int
    converged: bool
    objective_trajectory: np.ndarray = field(repr=False)
    mu_trajectory: np.ndarray = field(repr=False)
    residual: float = 0.0  # ||low_rank + sparse - observed||_F

    def sparse_support(self, min_magnitude: float = 1e-6) -> np.ndarray:
        return np.abs(self.sparse) > min_magnitude


def soft_threshold(x: np.ndarray | float, tau: float):
    """Elementwise shrink toward zero: sign(x) * max(|x| - tau, 0)."""
    if tau < 0:
        raise ConfigError("threshold must be non-negative")
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def svt(G: np.ndarray, tau: float) -> np.ndarray:
    """Singular value thresholding: shrink the spectrum of G by tau."""
    if tau < 0:
        raise ConfigError("threshold must be non-negative")
    U, sig, Vt = np.linalg.svd(G, full_matrices=False)
    return U @ (soft_threshold(sig, tau)[:, None] * Vt)


def _objective(s, i, sa, mu, lam):
    nuc = np.linalg.svd(s, compute_uv=False).sum()
    return float(
        mu * nuc + mu * lam * np.abs(i).sum() + 0.5 * np.linalg.norm(s + i - sa) ** 2
    )


def apg_rpca(s_a: np.ndarray, cfg: ApgConfig | None = None) -> RpcaResult:
    """Decompose an observed matrix into low-rank + sparse parts.

    Momentum restarts keep the objective non-increasing once the
    continuation parameter has settled at its floor; failing to reach
    ``cfg.tol`` within ``cfg.max_iter`` returns the best iterate with
    converged=False rather than raising.
    """
    cfg = cfg or ApgConfig()
    cfg.validate()
    s_a = np.asarray(s_a, dtype=np.float64)
    if not np.all(np.isfinite(s_a)):
        raise ConfigError("observed matrix has non-finite entries")
    q, p = s_a.shape
    lam = cfg.lam if cfg.lam is not None else 1.0 / np.sqrt(max(q, p))
    sigma_max = np.linalg.svd(s_a, compute_uv=False)[0] if s_a.any() else 1.0
    mu = cfg.mu0 if cfg.mu0 is not None else 0.99 * sigma_max
    mu_bar = cfg.mu_bar if cfg.mu_bar is not None else 1e-9 * mu

    s = np.zeros_like(s_a)
    i = np.zeros_like(s_a)
    s_prev, i_prev = s, i
    t, t_prev = 1.0, 1.0
    objs: list[float] = []
    mus: list[float] = []
    mu_prev = None
    converged = False
    k = 0
    for k in range(1, cfg.max_iter + 1):
        beta = (t_prev - 1.0) / t
        Ys = s + beta * (s - s_prev)
        Yi = i + beta * (i - i_prev)
        half_res = 0.5 * (Ys + Yi - s_a)
        s_next = svt(Ys - half_res, mu / 2.0)
        i_next = soft_threshold(Yi - half_res, lam * mu / 2.0)
        obj = _objective(s_next, i_next, s_a, mu, lam)

        if mu_prev == mu and objs and obj > objs[-1]:
            # momentum overshot: restart from the plain proximal step, which
            # cannot increase the objective at a fixed mu
            half_res = 0.5 * (s + i - s_a)
            s_next = svt(s - half_res, mu / 2.0)
            i_next = soft_threshold(i - half_res, lam * mu / 2.0)
            t, t_prev = 1.0, 1.0
            obj = _objective(s_next, i_next, s_a, mu, lam)

        change = np.sqrt(
            np.linalg.norm(s_next - s) ** 2 + np.linalg.norm(i_next - i) ** 2
        )
        scale = max(1.0, np.sqrt(np.linalg.norm(s) ** 2 + np.linalg.norm(i) ** 2))
        s_prev, i_prev = s, i
        s, i = s_next, i_next
        t, t_prev = (1.0 + np.sqrt(4.0 * t * t + 1.0)) / 2.0, t
        objs.append(obj)
        mus.append(mu)
        mu_prev = mu
        mu = max(cfg.eta * mu, mu_bar)
        if change / scale < cfg.tol:
            converged = True
            break

    return RpcaResult(
        low_rank=s,
        sparse=i,
        iterations=k,
        converged=converged,
        objective_trajectory=np.asarray(objs),
        mu_trajectory=np.asarray(mus),
        residual=float(np.linalg.norm(s + i - s_a)),
    )


def sanitize_frame(
    poisoned: DataFrameNorm,
    cfg: ApgConfig | None = None,
    support_tol: float = 1e-6,
) -> tuple[DataFrameNorm, AttackVector, RpcaResult]:
    """Replace the feature block with its recovered low-rank component.

    The target column passes through untouched; the estimated sparse
    component is returned as an AttackVector for audit.
    """
    result = apg_rpca(poisoned.X, cfg)
    cleaned = poisoned.with_features(result.low_rank)
    mask = result.sparse_support(support_tol)
    rows, cols = np.nonzero(mask)
    estimate = AttackVector(
        rows=rows.astype(np.int64),
        cols=cols.astype(np.int64),
        values=result.sparse[rows, cols],
        shape=poisoned.shape,
    )
    return cleaned, estimate, result
