"""Per-covariate Box-Cox transformation search with zero-inflation handling
and AIC selection among candidate linear-model forms."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .data import SpatialDataset
from .design import (
    BoxCox,
    BoxCoxSquared,
    DesignRecipe,
    IndicatorNonzero,
    Intercept,
    Raw,
    boxcox,
    dummy_constructors,
)

__all__ = [
    "TransformSpec",
    "fit_candidate_lm",
    "select_transform",
    "select_all",
    "constructors_for_spec",
    "LAMBDA1_GRID",
    "ZERO_INFLATION_THRESHOLD",
]

LAMBDA1_GRID = tuple(np.arange(0.0, 3.0 + 1e-9, 0.25))
ZERO_INFLATION_THRESHOLD = 0.02

#: Candidate families in tie-break order (fewer parameters first).
ZERO_FAMILIES = ("indicator", "indicator-boxcox", "indicator-plus-boxcox")
PLAIN_FAMILIES = ("boxcox-linear", "boxcox-quadratic")

#: Number of mean parameters each family adds beyond the intercept.
_FAMILY_TERMS = {
    "indicator": 1,
    "indicator-boxcox": 1,
    "indicator-plus-boxcox": 2,
    "boxcox-linear": 1,
    "boxcox-quadratic": 2,
    "raw": 1,
}


@dataclass(frozen=True)
class TransformSpec:
    covariate: str
    family: str
    lambda1: float
    lambda2: float
    aic: float
    zero_inflated: bool


def fit_candidate_lm(y: np.ndarray, columns: np.ndarray):
    """Gaussian AIC of the OLS fit of y on [1, columns]; None if rank deficient.

    AIC = n log(RSS/n) + 2k + n(log 2pi + 1) with k = #coefficients + 1 for the
    variance.  RSS is floored at 1e-12 * n * var(y) so perfect fits stay finite.
    """
    y = np.asarray(y, dtype=float)
    n = len(y)
    design = np.column_stack([np.ones(n), columns]) if columns.size else np.ones((n, 1))
    coef, residues, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < design.shape[1]:
        return None
    resid = y - design @ coef
    rss = float(resid @ resid)
    floor = 1e-12 * n * float(np.var(y))
    rss = max(rss, floor, 1e-300)
    k = design.shape[1] + 1
    return n * math.log(rss / n) + 2 * k + n * (math.log(2 * math.pi) + 1.0)


def _lambda2_grid(relevant: np.ndarray):
    """Shift candidates keeping x + lambda2 > 0 over the relevant values."""
    if relevant.size == 0:
        return (1.0,)
    lo = float(relevant.min())
    if lo > 0:
        return (0.0, 1.0)
    grid = {1.0, abs(lo) + 1.0}
    return tuple(sorted(l2 for l2 in grid if lo + l2 > 0))


def _family_columns(x: np.ndarray, family: str, lambda1: float, lambda2: float):
    nz = x != 0.0
    if family == "indicator":
        return nz.astype(float)[:, None]
    if family in ("indicator-boxcox", "indicator-plus-boxcox"):
        g = np.zeros_like(x)
        g[nz] = boxcox(x[nz], lambda1, lambda2)
        if family == "indicator-boxcox":
            return g[:, None]
        return np.column_stack([nz.astype(float), g])
    g = boxcox(x, lambda1, lambda2)
    if family == "boxcox-linear":
        return g[:, None]
    return np.column_stack([g, g**2])


def select_transform(dataset: SpatialDataset, covariate: str,
                     zero_threshold: float = ZERO_INFLATION_THRESHOLD) -> TransformSpec:
    """AIC-minimizing (family, lambda1, lambda2) for one covariate.

    Zero-inflated covariates (> zero_threshold exact zeros) search the
    indicator families; others the linear/quadratic Box-Cox families.  Ties
    break toward fewer parameters, then smaller lambda1, then smaller lambda2.
    """
    x = dataset.covariate(covariate)
    if np.ptp(x) == 0.0:
        raise ValueError(f"covariate {covariate!r} is constant")
    y = dataset.response
    zero_fraction = float(np.mean(x == 0.0))
    zero_inflated = zero_fraction > zero_threshold
    families = ZERO_FAMILIES if zero_inflated else PLAIN_FAMILIES
    relevant = x[x != 0.0] if zero_inflated else x
    lambda2_grid = _lambda2_grid(relevant)

    best = None
    skipped = 0
    for family in families:
        if family == "indicator":
            grid = [(0.0, 0.0)]
        else:
            grid = [(l1, l2) for l1 in LAMBDA1_GRID for l2 in lambda2_grid]
        for l1, l2 in grid:
            cols = _family_columns(x, family, l1, l2)
            aic = fit_candidate_lm(y, cols)
            if aic is None:
                skipped += 1
                continue
            if best is None or aic < best.aic:
                best = TransformSpec(covariate, family, l1, l2, aic, zero_inflated)
    if best is None:
        warnings.warn(f"all transform candidates for {covariate!r} were rank deficient; "
                      "falling back to the raw covariate")
        aic = fit_candidate_lm(y, x[:, None])
        return TransformSpec(covariate, "raw", 1.0, 0.0, aic if aic is not None else math.inf,
                             zero_inflated)
    return best


def constructors_for_spec(spec: TransformSpec):
    c, l1, l2 = spec.covariate, spec.lambda1, spec.lambda2
    if spec.family == "indicator":
        return [IndicatorNonzero(c)]
    if spec.family == "indicator-boxcox":
        return [BoxCox(c, l1, l2, times_indicator=True)]
    if spec.family == "indicator-plus-boxcox":
        return [IndicatorNonzero(c), BoxCox(c, l1, l2, times_indicator=True)]
    if spec.family == "boxcox-linear":
        return [BoxCox(c, l1, l2)]
    if spec.family == "boxcox-quadratic":
        return [BoxCox(c, l1, l2), BoxCoxSquared(c, l1, l2)]
    if spec.family == "raw":
        return [Raw(c)]
    raise ValueError(f"unknown family {spec.family!r}")


def select_all(dataset: SpatialDataset, zero_threshold: float = ZERO_INFLATION_THRESHOLD,
               specs: list[TransformSpec] | None = None) -> DesignRecipe:
    """Transform every numeric covariate and assemble the full design recipe:
    intercept, per-covariate transform columns, then categorical dummies.

    Per-covariate failures fall back to the raw covariate with a warning and
    never abort the batch.  Pass ``specs`` to collect the chosen TransformSpecs.
    """
    constructors = [Intercept()]
    for col in dataset.columns:
        if col.is_categorical:
            continue
        try:
            spec = select_transform(dataset, col.name, zero_threshold=zero_threshold)
        except ValueError as exc:
            warnings.warn(f"transform search failed for {col.name!r}: {exc}")
            continue
        if specs is not None:
            specs.append(spec)
        constructors.extend(constructors_for_spec(spec))
    for col in dataset.columns:
        if col.is_categorical:
            constructors.extend(dummy_constructors(dataset, col.name))
    return DesignRecipe(constructors)
