"""Two-phase covariate selection: backward stepwise AIC on the ordinary linear
model, then t-statistic pruning of the SLM under reduced-rank ML, with a final
REML full-rank refit."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .covariance import default_knot_count, place_knots
from .data import SpatialDataset
from .design import (
    BoxCox,
    BoxCoxSquared,
    CategoryDummy,
    DesignRecipe,
    IndicatorNonzero,
    Intercept,
    build_design,
)
from .slm import FitOptions, NonConvergenceError, fit_slm

__all__ = ["SelectionStep", "SelectionTrace", "stepwise_lm", "prune_slm", "droppable_groups"]


@dataclass(frozen=True)
class SelectionStep:
    action: str  # "drop" or "stop"
    columns: tuple[str, ...]
    aic_before: float
    aic_after: float
    t_stat_of_dropped: float


@dataclass
class SelectionTrace:
    steps: list[SelectionStep] = field(default_factory=list)
    final_diagnostics: object = None

    def dropped_columns(self):
        out = []
        for step in self.steps:
            if step.action == "drop":
                out.extend(step.columns)
        return out


def droppable_groups(recipe: DesignRecipe):
    """Atomic candidate-removal groups as lists of constructor indices.

    The intercept is never droppable; category dummies group per covariate;
    an indicator and its interacted Box-Cox term, and a Box-Cox term and its
    square, are atomic pairs.
    """
    groups = []
    dummies: dict[str, list[int]] = {}
    consumed = set()
    cons = recipe.constructors
    for i, c in enumerate(cons):
        if i in consumed or isinstance(c, Intercept):
            continue
        if isinstance(c, CategoryDummy):
            dummies.setdefault(c.covariate, []).append(i)
            continue
        if isinstance(c, IndicatorNonzero) and i + 1 < len(cons):
            nxt = cons[i + 1]
            if isinstance(nxt, BoxCox) and nxt.covariate == c.covariate and nxt.times_indicator:
                groups.append([i, i + 1])
                consumed.update((i, i + 1))
                continue
        if isinstance(c, BoxCox) and i + 1 < len(cons):
            nxt = cons[i + 1]
            if (isinstance(nxt, BoxCoxSquared) and nxt.covariate == c.covariate
                    and nxt.lambda1 == c.lambda1 and nxt.lambda2 == c.lambda2):
                groups.append([i, i + 1])
                consumed.update((i, i + 1))
                continue
        groups.append([i])
        consumed.add(i)
    groups.extend(dummies.values())
    return groups


def _ols_aic_and_t(dataset: SpatialDataset, recipe: DesignRecipe):
    """OLS Gaussian AIC plus per-column |t| statistics for a recipe."""
    X = build_design(recipe, dataset)
    y = dataset.response
    n, k = X.shape
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    rss = max(float(resid @ resid), 1e-12 * n * float(np.var(y)), 1e-300)
    aic = n * math.log(rss / n) + 2 * (k + 1) + n * (math.log(2 * math.pi) + 1.0)
    if rank < k:
        # duplicated columns: t-statistics are meaningless, but the AIC (with
        # the full declared parameter count) still drives the duplicate out
        return aic, np.zeros(k)
    dof = max(n - k, 1)
    s2 = rss / dof
    XtX_inv = np.linalg.pinv(X.T @ X)
    se = np.sqrt(np.maximum(s2 * np.diag(XtX_inv), 1e-300))
    return aic, np.abs(coef / se)


def stepwise_lm(dataset: SpatialDataset, recipe: DesignRecipe):
    """Greedy backward elimination on OLS AIC; groups are dropped atomically.

    At each step the single group whose removal most decreases the AIC is
    dropped; stops when no removal decreases it.
    """
    current = recipe
    trace = SelectionTrace()
    aic, t_abs = _ols_aic_and_t(dataset, current)
    while True:
        groups = droppable_groups(current)
        if not groups:
            trace.steps.append(SelectionStep("stop", (), aic, aic, math.nan))
            break
        best = None
        names = current.column_names()
        for group in groups:
            candidate = current.drop(group)
            cand_aic, _ = _ols_aic_and_t(dataset, candidate)
            if best is None or cand_aic < best[0]:
                best = (cand_aic, group, candidate)
        cand_aic, group, candidate = best
        if cand_aic < aic:
            dropped = tuple(names[j] for j in group)
            t_drop = float(np.max(t_abs[group])) if len(t_abs) else math.nan
            trace.steps.append(SelectionStep("drop", dropped, aic, cand_aic, t_drop))
            current = candidate
            aic, t_abs = _ols_aic_and_t(dataset, current)
        else:
            trace.steps.append(SelectionStep("stop", (), aic, cand_aic, math.nan))
            break
    return current, trace


def _fit_ml_reduced(dataset, recipe, knots, options):
    opts = replace(options, method="ML", knots=knots)
    try:
        return fit_slm(dataset, recipe, opts)
    except NonConvergenceError as exc:
        warnings.warn("SLM fit did not converge during pruning; using best-so-far parameters")
        return exc.model, exc.diagnostics


def prune_slm(dataset: SpatialDataset, recipe: DesignRecipe,
              options: FitOptions = FitOptions(), knots=None,
              literal_tstat: bool = False):
    """Phase-2 pruning: reduced-rank ML refits, removing the group with the
    smallest absolute t-statistic until the AIC increases; the surviving model
    is refit by REML with the full-rank covariance.

    ``literal_tstat=True`` removes the largest-|t| group instead (the paper's
    literal wording); the default follows standard stepwise practice.
    """
    if knots is None:
        r = min(default_knot_count(dataset.n), dataset.n)
        knots = place_knots(dataset.coords, r, seed=options.seed)
    current = recipe
    model, diag = _fit_ml_reduced(dataset, current, knots, options)
    trace = SelectionTrace()
    while True:
        groups = [g for g in droppable_groups(model.recipe)]
        if not groups:
            trace.steps.append(SelectionStep("stop", (), diag.aic, diag.aic, math.nan))
            break
        t_abs = np.abs(diag.t_stats)
        scores = [float(np.max(t_abs[g])) for g in groups]
        pick = int(np.argmax(scores)) if literal_tstat else int(np.argmin(scores))
        group = groups[pick]
        names = model.recipe.column_names()
        candidate = model.recipe.drop(group)
        try:
            cand_model, cand_diag = _fit_ml_reduced(dataset, candidate, knots, options)
        except Exception as exc:  # keep the last valid model on hard failures
            warnings.warn(f"pruning refit failed ({exc}); stopping with last valid model")
            trace.steps.append(SelectionStep("stop", (), diag.aic, math.inf, math.nan))
            break
        if cand_diag.aic <= diag.aic:
            trace.steps.append(SelectionStep(
                "drop", tuple(names[j] for j in group), diag.aic, cand_diag.aic, scores[pick]))
            model, diag = cand_model, cand_diag
        else:
            trace.steps.append(SelectionStep("stop", (), diag.aic, cand_diag.aic, scores[pick]))
            break
    final_opts = replace(options, method="REML", knots=None)
    try:
        final_model, final_diag = fit_slm(dataset, model.recipe, final_opts)
    except NonConvergenceError as exc:
        warnings.warn("final REML refit did not converge; returning best-so-far model")
        final_model, final_diag = exc.model, exc.diagnostics
    trace.final_diagnostics = final_diag
    return final_model, trace
