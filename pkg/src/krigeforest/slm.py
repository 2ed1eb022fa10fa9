"""Spatial linear model estimation: profiled ML/REML likelihood, simplex
optimization of the covariance parameters, and fit diagnostics."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .covariance import (
    CovarianceParams,
    KnotSet,
    SingularCovarianceError,
    build_sigma_operator,
    cross_distances,
    pairwise_distances,
)
from .data import SpatialDataset
from .design import DesignRecipe, build_design

__all__ = [
    "FitOptions",
    "SLMDiagnostics",
    "FittedSLM",
    "NonConvergenceError",
    "neg_log_likelihood",
    "profile_beta",
    "fit_slm",
    "effective_range",
]

LOG_2PI = math.log(2.0 * math.pi)
ALIAS_CONDITION_LIMIT = 1e10


@dataclass(frozen=True)
class FitOptions:
    method: str = "REML"  # "ML" or "REML"
    knots: KnotSet | None = None  # None = full-rank covariance
    restarts: int = 3
    tolerance: float = 1e-6
    max_iter: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("ML", "REML"):
            raise ValueError(f"method must be ML or REML, got {self.method!r}")
        if self.tolerance <= 0 or self.restarts < 1:
            raise ValueError("tolerance must be positive and restarts >= 1")


@dataclass(frozen=True)
class SLMDiagnostics:
    neg_log_lik: float
    aic: float
    effective_range: float
    nugget_to_sill: float
    t_stats: np.ndarray
    converged: bool = True


class NonConvergenceError(RuntimeError):
    """Optimizer failed to converge; carries the best model found so far."""

    def __init__(self, model, diagnostics):
        super().__init__("covariance optimizer did not converge after all restarts")
        self.model = model
        self.diagnostics = diagnostics


@dataclass
class FittedSLM:
    recipe: DesignRecipe
    beta: np.ndarray
    beta_cov: np.ndarray
    cov_params: CovarianceParams
    method: str
    knots: KnotSet | None
    training_coords: np.ndarray
    training_design: np.ndarray
    training_response: np.ndarray
    column_names: tuple[str, ...]
    converged: bool = True
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def rank_mode(self) -> str:
        return "full" if self.knots is None else "reduced"

    @property
    def k(self) -> int:
        return len(self.beta)

    def sigma_operator(self):
        if "op" not in self._cache:
            knot_coords = None if self.knots is None else self.knots.coords
            self._cache["op"] = build_sigma_operator(
                self.training_coords, self.cov_params, knot_coords=knot_coords
            )
        return self._cache["op"]


def _profiled_terms(op, design, response):
    """Profiled beta and likelihood building blocks for a covariance operator."""
    y = response
    n = len(y)
    k = design.shape[1]
    Si_y = op.solve(y)
    if k == 0:
        quad = float(y @ Si_y)
        return np.empty(0), None, quad, 0.0
    Si_X = op.solve(design)
    XtSiX = design.T @ Si_X
    sign, ld_XtSiX = np.linalg.slogdet(XtSiX)
    if sign <= 0:
        raise SingularCovarianceError("X' Sigma^-1 X is singular; design has aliased columns")
    beta = np.linalg.solve(XtSiX, design.T @ Si_y)
    resid = y - design @ beta
    Si_resid = Si_y - Si_X @ beta
    quad = float(resid @ Si_resid)
    return beta, XtSiX, quad, float(ld_XtSiX)


def neg_log_likelihood(theta: CovarianceParams, design, response, coords, method="ML",
                       knots: KnotSet | None = None, *, distances=None, knot_distances=None,
                       knot_self_distances=None) -> float:
    """Profiled negative log-likelihood of the SLM at covariance parameters theta."""
    design = np.asarray(design, dtype=float)
    if design.ndim == 1:
        design = design[:, None]
    response = np.asarray(response, dtype=float)
    n = len(response)
    knot_coords = None if knots is None else knots.coords
    op = build_sigma_operator(coords, theta, knot_coords=knot_coords, distances=distances,
                              knot_distances=knot_distances, knot_self_distances=knot_self_distances)
    beta, XtSiX, quad, ld_XtSiX = _profiled_terms(op, design, response)
    c = 0.0
    if method == "REML" and design.shape[1] > 0:
        c = -design.shape[1] * LOG_2PI + ld_XtSiX
    return 0.5 * (n * LOG_2PI + op.logdet() + quad + c)


def profile_beta(theta: CovarianceParams, design, response, coords, knots: KnotSet | None = None):
    """GLS coefficients (X'S^-1 X)^-1 X'S^-1 y and their covariance matrix."""
    design = np.asarray(design, dtype=float)
    if design.ndim == 1:
        design = design[:, None]
    knot_coords = None if knots is None else knots.coords
    op = build_sigma_operator(coords, theta, knot_coords=knot_coords)
    beta, XtSiX, _, _ = _profiled_terms(op, design, np.asarray(response, dtype=float))
    beta_cov = np.linalg.inv(XtSiX) if XtSiX is not None else np.empty((0, 0))
    return beta, beta_cov


def effective_range(params: CovarianceParams) -> float:
    """Distance beyond which autocorrelation C(h)/C(0) drops below 0.01; 0 when
    the nugget alone already puts correlation below that level."""
    if params.partial_sill == 0:
        return 0.0
    value = -params.range * math.log(0.01 * params.sill / params.partial_sill)
    return max(value, 0.0)


def drop_aliased_columns(design: np.ndarray, names):
    """Drop near-aliased design columns (condition number > 1e10), rightmost first."""
    names = list(names)
    keep = list(range(design.shape[1]))
    while len(keep) > 1:
        sub = design[:, keep]
        cond = np.linalg.cond(sub)
        if np.isfinite(cond) and cond <= ALIAS_CONDITION_LIMIT:
            break
        dropped = keep.pop()
        warnings.warn(f"dropping near-aliased design column {names[dropped]!r}")
    return keep


def _optimize_covariance(design, response, coords, method, knots, options: FitOptions):
    """Simplex search over log covariance parameters; returns (params, nll, converged)."""
    n = len(response)
    distances = None
    knot_distances = knot_self = None
    if knots is None:
        distances = pairwise_distances(coords)
        max_dist = float(distances.max()) if n > 1 else 1.0
    else:
        knot_distances = cross_distances(coords, knots.coords)
        knot_self = pairwise_distances(knots.coords)
        max_dist = float(knot_distances.max()) if knot_distances.size else 1.0
    if max_dist <= 0:
        max_dist = 1.0

    if design.shape[1] > 0:
        coef, *_ = np.linalg.lstsq(design, response, rcond=None)
        resid = response - design @ coef
    else:
        resid = response
    res_var = float(np.var(resid))
    if res_var <= 0:
        res_var = max(float(np.var(response)), 1e-8)
    x0 = np.log([0.5 * res_var, 0.5 * res_var, max_dist / 4.0])

    def objective(log_theta):
        log_theta = np.clip(log_theta, -40.0, 40.0)
        theta = CovarianceParams(*np.exp(log_theta))
        try:
            return neg_log_likelihood(
                theta, design, response, coords, method=method, knots=knots,
                distances=distances, knot_distances=knot_distances,
                knot_self_distances=knot_self,
            )
        except SingularCovarianceError:
            return 1e30

    rng = np.random.default_rng(options.seed)
    best = None
    any_converged = False
    for restart in range(options.restarts):
        start = x0 if restart == 0 else x0 + rng.normal(scale=0.75, size=3)
        result = minimize(
            objective, start, method="Nelder-Mead",
            options={"xatol": options.tolerance, "fatol": options.tolerance,
                     "maxiter": options.max_iter, "maxfev": 2 * options.max_iter},
        )
        any_converged = any_converged or bool(result.success)
        if best is None or result.fun < best.fun:
            best = result
    params = CovarianceParams(*np.exp(np.clip(best.x, -40.0, 40.0)))
    return params, float(best.fun), any_converged


def fit_slm(dataset: SpatialDataset, recipe: DesignRecipe, options: FitOptions = FitOptions()):
    """Fit the SLM: optimize covariance parameters, profile beta, and collect
    diagnostics.  Returns (FittedSLM, SLMDiagnostics); raises NonConvergenceError
    (carrying the best model) if no optimizer restart converged."""
    design = build_design(recipe, dataset)
    names = recipe.column_names()
    keep = drop_aliased_columns(design, names)
    if len(keep) < design.shape[1]:
        dropped = sorted(set(range(design.shape[1])) - set(keep))
        recipe = recipe.drop(dropped)
        design = design[:, keep]
        names = [names[j] for j in keep]
    n, k = design.shape
    if n < k + 3:
        raise ValueError(f"need n >= k + 3 to fit the SLM (n={n}, k={k})")

    coords = dataset.coords
    params, nll, converged = _optimize_covariance(
        design, dataset.response, coords, options.method, options.knots, options
    )
    beta, beta_cov = profile_beta(params, design, dataset.response, coords, knots=options.knots)
    model = FittedSLM(
        recipe=recipe,
        beta=beta,
        beta_cov=beta_cov,
        cov_params=params,
        method=options.method,
        knots=options.knots,
        training_coords=coords,
        training_design=design,
        training_response=dataset.response,
        column_names=tuple(names),
        converged=converged,
    )
    # AIC always uses the ML likelihood so models with different fixed effects
    # stay comparable.
    if options.method == "ML":
        ml_nll = nll
    else:
        ml_nll = neg_log_likelihood(params, design, dataset.response, coords,
                                    method="ML", knots=options.knots)
    with np.errstate(divide="ignore", invalid="ignore"):
        se = np.sqrt(np.diag(beta_cov)) if k else np.empty(0)
        t_stats = np.where(se > 0, beta / se, np.inf) if k else np.empty(0)
    diagnostics = SLMDiagnostics(
        neg_log_lik=nll,
        aic=2.0 * ml_nll + 2.0 * (k + 3),
        effective_range=effective_range(params),
        nugget_to_sill=params.nugget / params.sill,
        t_stats=t_stats,
        converged=converged,
    )
    if not converged:
        raise NonConvergenceError(model, diagnostics)
    return model, diagnostics
