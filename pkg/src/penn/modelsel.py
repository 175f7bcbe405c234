"""hv-block cross-validation and (lambda, delta) grid search."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from penn.trainer import Dataset, OptimizerConfig, PennConfig, TrainedModel, train

log = logging.getLogger(__name__)

TrainFn = Callable[[Dataset, float, float], TrainedModel]


@dataclass(frozen=True)
class HvBlockSpec:
    v: int = 10
    h: int = 10

    def __post_init__(self):
        if self.v < 2:
            raise ValueError("v must be >= 2")
        if self.h < 0:
            raise ValueError("h must be >= 0")


def hv_block_splits(n: int, spec: HvBlockSpec = HvBlockSpec()) -> list[tuple[np.ndarray, np.ndarray]]:
    """Ordered validation blocks with ``h`` samples masked on each side.

    Blocks differ in size by at most one, the remainder going to the earliest
    blocks. Training indices are everything outside ``[a - h, b + h]`` for a
    validation block ``[a, b]``.
    """
    if n < spec.v:
        raise ValueError(f"cannot form {spec.v} validation blocks from {n} samples")
    idx = np.arange(n)
    splits = []
    for block in np.array_split(idx, spec.v):
        a, b = int(block[0]), int(block[-1])
        keep = (idx < a - spec.h) | (idx > b + spec.h)
        train_idx = idx[keep]
        if train_idx.size == 0:
            raise ValueError(f"validation block [{a}, {b}] leaves no training data with h={spec.h}")
        splits.append((train_idx, block.copy()))
    return splits


@dataclass
class GridResult:
    table: pd.DataFrame
    best_lambda: float
    best_delta: float
    best_mse: float
    failures: list[str] = field(default_factory=list)


def default_train_fn(penn_cfg: PennConfig | None = None, opt_cfg: OptimizerConfig | None = None) -> TrainFn:
    base = penn_cfg or PennConfig()
    opt = opt_cfg or OptimizerConfig()

    def fit(data: Dataset, lam: float, delta: float) -> TrainedModel:
        return train(data, base.with_hyper(lam, delta), opt)

    return fit


def _validation_mse(train_fn: TrainFn, data: Dataset, train_idx, val_idx, lam: float, delta: float) -> float:
    # the prior is rebuilt on the training subset inside train()
    model = train_fn(data.subset(train_idx), lam, delta)
    val = data.subset(val_idx)
    resid = val.y - model.predict_mean(val)
    return float(np.mean(resid * resid))


def _run_cell(train_fn, data, folds, lam, delta):
    try:
        return [_validation_mse(train_fn, data, tr, va, lam, delta) for tr, va in folds], None
    except Exception as exc:  # recorded per cell; the grid continues
        return None, f"lambda={lam}, delta={delta}: {type(exc).__name__}: {exc}"


def _check_endpoints(lambda_grid, delta_grid):
    missing = []
    if 0.0 not in lambda_grid:
        missing.append("lambda=0")
    if 0.0 not in delta_grid:
        missing.append("delta=0")
    if 1.0 not in delta_grid:
        missing.append("delta=1")
    if missing:
        raise ValueError(
            f"grid lacks the static/unregularized endpoints ({', '.join(missing)}); "
            "pass require_endpoints=False to allow this"
        )


def select_best(table: pd.DataFrame) -> tuple[float, float, float]:
    """Argmin of mean validation MSE; ties go to larger lambda, then smaller delta."""
    valid = table[table["valid"]]
    if valid.empty:
        raise RuntimeError("every grid cell failed")
    best = valid["mean_mse"].min()
    tied = valid[valid["mean_mse"] == best].sort_values(["lambda", "delta"], ascending=[False, True])
    row = tied.iloc[0]
    return float(row["lambda"]), float(row["delta"]), float(best)


def _search(folds, data, lambda_grid, delta_grid, train_fn, require_endpoints, jobs) -> GridResult:
    lambda_grid = [float(v) for v in lambda_grid]
    delta_grid = [float(v) for v in delta_grid]
    if not lambda_grid or not delta_grid:
        raise ValueError("lambda and delta grids must be nonempty")
    if require_endpoints:
        _check_endpoints(lambda_grid, delta_grid)
    cells = [(lam, d) for lam in lambda_grid for d in delta_grid]
    results = Parallel(n_jobs=jobs)(
        delayed(_run_cell)(train_fn, data, folds, lam, d) for lam, d in cells
    )
    rows, failures = [], []
    for (lam, d), (mses, err) in zip(cells, results):
        if err is not None:
            log.warning("grid cell failed: %s", err)
            failures.append(err)
        rows.append(
            {
                "lambda": lam,
                "delta": d,
                "mean_mse": math.nan if mses is None else float(np.mean(mses)),
                "n_folds": 0 if mses is None else len(mses),
                "valid": mses is not None,
            }
        )
    table = pd.DataFrame(rows)
    best_lam, best_delta, best_mse = select_best(table)
    return GridResult(table, best_lam, best_delta, best_mse, failures)


def grid_search(
    data: Dataset,
    lambda_grid: Sequence[float],
    delta_grid: Sequence[float],
    spec: HvBlockSpec = HvBlockSpec(),
    train_fn: TrainFn | None = None,
    *,
    require_endpoints: bool = True,
    jobs: int = 1,
) -> GridResult:
    """Mean hv-block validation MSE for every (lambda, delta) cell.

    Validation predictions use posterior means. Cells whose training fails
    are kept in the table with ``valid=False``.
    """
    folds = hv_block_splits(data.n, spec)
    return _search(folds, data, lambda_grid, delta_grid, train_fn or default_train_fn(), require_endpoints, jobs)


def holdout_search(
    train_data: Dataset,
    val_data: Dataset,
    lambda_grid: Sequence[float],
    delta_grid: Sequence[float],
    train_fn: TrainFn | None = None,
    *,
    require_endpoints: bool = True,
    jobs: int = 1,
) -> GridResult:
    """Grid search against a separate validation sample."""
    n_tr = train_data.n
    stacked = Dataset(
        np.vstack([train_data.x, val_data.x]),
        np.concatenate([train_data.y, val_data.y]),
        None if train_data.z is None else np.vstack([train_data.z, val_data.z]),
        intercept=train_data.intercept,
        feature_names=train_data.feature_names,
    )
    folds = [(np.arange(n_tr), np.arange(n_tr, n_tr + val_data.n))]
    return _search(folds, stacked, lambda_grid, delta_grid, train_fn or default_train_fn(), require_endpoints, jobs)
