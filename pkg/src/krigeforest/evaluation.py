"""k-fold cross-validation driver and prediction performance measures."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import SpatialDataset

__all__ = ["PredictionBatch", "CVReport", "rmspe", "interval_coverage", "kfold_cv"]


@dataclass
class PredictionBatch:
    """Pooled predictions with 90% and 95% intervals (arrays of equal length)."""

    mean: np.ndarray
    lower90: np.ndarray
    upper90: np.ndarray
    lower95: np.ndarray
    upper95: np.ndarray


@dataclass
class CVReport:
    label: str
    k_params: int | None
    rmspe: float
    pic90: float | None
    pic95: float | None
    interval_lengths: np.ndarray
    fold_assignments: np.ndarray
    failed_folds: tuple[int, ...] = ()


def rmspe(observed, predicted) -> float:
    observed = np.asarray(observed, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if observed.shape != predicted.shape or observed.size == 0:
        raise ValueError("observed and predicted must have equal nonzero length")
    return float(np.sqrt(np.mean((observed - predicted) ** 2)))


def interval_coverage(observed, lower, upper) -> float:
    """Proportion of observations strictly inside their intervals."""
    observed = np.asarray(observed, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(lower > upper):
        raise ValueError("malformed interval: lower > upper")
    return float(np.mean((lower < observed) & (observed < upper)))


def fold_partition(n: int, k: int, seed: int) -> np.ndarray:
    """Seeded random assignment of rows to k near-equal folds."""
    if k < 2 or n < k:
        raise ValueError(f"need 2 <= k <= n (k={k}, n={n})")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    assignment = np.empty(n, dtype=int)
    for fold, chunk in enumerate(np.array_split(perm, k)):
        assignment[chunk] = fold
    return assignment


def kfold_cv(dataset: SpatialDataset, model_factory, k: int = 10, seed: int = 0,
             label: str = "model") -> CVReport:
    """Cross-validate a full pipeline: ``model_factory(train_dataset)`` must
    return an object with ``predict_batch(test_dataset) -> PredictionBatch``
    (and optionally ``k_params``).  The pipeline is refit within every training
    fold; metrics pool the held-out predictions."""
    assignment = fold_partition(dataset.n, k, seed)
    n = dataset.n
    mean = np.full(n, np.nan)
    lo90 = np.full(n, np.nan)
    hi90 = np.full(n, np.nan)
    lo95 = np.full(n, np.nan)
    hi95 = np.full(n, np.nan)
    k_params = None
    failed = []
    for fold in range(k):
        test_rows = np.flatnonzero(assignment == fold)
        train_rows = np.flatnonzero(assignment != fold)
        try:
            model = model_factory(dataset.subset(train_rows))
            batch = model.predict_batch(dataset.subset(test_rows))
        except Exception as exc:
            warnings.warn(f"fold {fold} failed for {label}: {exc}")
            failed.append(fold)
            continue
        mean[test_rows] = batch.mean
        lo90[test_rows], hi90[test_rows] = batch.lower90, batch.upper90
        lo95[test_rows], hi95[test_rows] = batch.lower95, batch.upper95
        k_params = getattr(model, "k_params", k_params)
    ok = ~np.isnan(mean)
    if not ok.any():
        raise RuntimeError(f"every fold failed for {label}")
    y = dataset.response[ok]
    lengths = hi90[ok] - lo90[ok]
    nonzero = lengths > 0
    pic90 = interval_coverage(y[nonzero], lo90[ok][nonzero], hi90[ok][nonzero]) if nonzero.any() else None
    lengths95 = hi95[ok] - lo95[ok]
    nz95 = lengths95 > 0
    pic95 = interval_coverage(y[nz95], lo95[ok][nz95], hi95[ok][nz95]) if nz95.any() else None
    return CVReport(
        label=label,
        k_params=k_params,
        rmspe=rmspe(y, mean[ok]),
        pic90=pic90,
        pic95=pic95,
        interval_lengths=lengths[nonzero],
        fold_assignments=assignment,
        failed_folds=tuple(failed),
    )
