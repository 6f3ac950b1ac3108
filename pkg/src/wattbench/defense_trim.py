"""Training-level defense: trimmed regression.

Alternates between selecting the assumed-clean number of lowest-residual
rows and refitting on that subset, restarted from several random subsets.
Both alternating steps can only lower the trimmed objective, so each
restart's loss trajectory is non-increasing and terminates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .errors import ConfigError
from .regress import LinearModel, TrainConfig, fit, mse, predict, training_objective


@dataclass(frozen=True)
class TrimConfig:
    n_clean: int  # assumed number of legitimate rows
    max_iter: int = 100
    restarts: int = 5
    seed: int = 0
    loss_tol: float = 1e-9
    include_penalty_in_loss: bool = True

    def validate(self, n_total: int) -> None:
        if not (0 < self.n_clean <= n_total):
            raise ConfigError(
                f"n_clean must be in (0, {n_total}], got {self.n_clean}"
            )
        if self.restarts < 1 or self.max_iter < 1:
            raise ConfigError("restarts and max_iter must be >= 1")
        if self.loss_tol < 0:
            raise ConfigError("loss_tol must be non-negative")

    @classmethod
    def for_poison_rate(cls, n_total: int, rate: float, **kwargs) -> "TrimConfig":
        """Derive n_clean from a known poisoning rate: n = N / (1 + rate)."""
        n_clean = int(round(n_total / (1.0 + rate)))
        return cls(n_clean=n_clean, **kwargs)


@dataclass(frozen=True)
class TrimResult:
    model: LinearModel
    selected: np.ndarray  # sorted row indices, length n_clean
    loss_trajectory: np.ndarray = field(repr=False)
    converged: bool = True
    restart_index: int = 0

    @property
    def final_loss(self) -> float:
        return float(self.loss_trajectory[-1])

    def save_selected(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps([int(i) for i in self.selected]) + "\n"
        )


def _subset_loss(model, X, y, include_penalty):
    if include_penalty:
        return training_objective(model, X, y)
    return mse(predict(model, X), y)


def _lowest_residual_rows(model, X, y, n):
    sq = (predict(model, X) - y) ** 2
    # stable sort: equal residuals resolve to the lower row index
    return np.sort(np.argsort(sq, kind="stable")[:n])


def trim_fit(
    data: Dataset,
    learner: str,
    lam: float,
    cfg: TrimConfig,
    train_cfg: TrainConfig | None = None,
) -> TrimResult:
    """Fit on the best size-n_clean subset found over seeded restarts."""
    n_total = len(data)
    cfg.validate(n_total)
    best: TrimResult | None = None
    for r in range(cfg.restarts):
        rng = np.random.default_rng((cfg.seed, r))
        subset = np.sort(rng.choice(n_total, size=cfg.n_clean, replace=False))
        model = fit(learner, data.X[subset], data.y[subset], lam, train_cfg)
        loss = _subset_loss(model, data.X[subset], data.y[subset], cfg.include_penalty_in_loss)
        trajectory = [loss]
        converged = False
        for _ in range(cfg.max_iter):
            cand_subset = _lowest_residual_rows(model, data.X, data.y, cfg.n_clean)
            cand_model = fit(learner, data.X[cand_subset], data.y[cand_subset], lam, train_cfg)
            cand_loss = _subset_loss(
                cand_model, data.X[cand_subset], data.y[cand_subset],
                cfg.include_penalty_in_loss,
            )
            if cand_loss > loss:
                # both alternating steps are descent steps, so an increase can
                # only be inner-solver noise; keep the previous iterate
                converged = True
                break
            subset, model = cand_subset, cand_model
            trajectory.append(cand_loss)
            if abs(cand_loss - loss) <= cfg.loss_tol:
                converged = True
                break
            loss = cand_loss
        candidate = TrimResult(
            model=model,
            selected=subset,
            loss_trajectory=np.asarray(trajectory),
            converged=converged,
            restart_index=r,
        )
        if best is None or candidate.final_loss < best.final_loss:
            best = candidate
    return best


def defended_pipeline(
    poisoned_train: Dataset,
    test: Dataset,
    learner: str,
    lam: float,
    cfg: TrimConfig,
    train_cfg: TrainConfig | None = None,
) -> tuple[TrimResult, float, float]:
    """Test-set MSE with the trimmed defense vs. fitting on everything."""
    naive = fit(learner, poisoned_train.X, poisoned_train.y, lam, train_cfg)
    undefended_mse = mse(predict(naive, test.X), test.y)
    result = trim_fit(poisoned_train, learner, lam, cfg, train_cfg)
    defended_mse = mse(predict(result.model, test.X), test.y)
    return result, defended_mse, undefended_mse
