"""Random forest regression kriging: simple kriging (zero mean, exponential
covariance, ML) of the forest residuals added to the forest prediction."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .covariance import CovarianceParams, build_sigma_operator, cross_distances
from .data import SpatialDataset
from .forest import ForestModel, forest_from_dataset, rf_predict
from .kriging import COINCIDENT_TOL, PredictionResult
from .slm import FitOptions, _optimize_covariance

__all__ = ["RFRKModel", "fit_rfrk", "rfrk_predict", "rfrk_batch_predict", "fit_residual_covariance"]


@dataclass
class RFRKModel:
    forest: ForestModel
    residual_cov: CovarianceParams
    training_coords: np.ndarray
    residuals: np.ndarray
    converged: bool = True
    oob_residuals: bool = False
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def sigma_operator(self):
        if "op" not in self._cache:
            self._cache["op"] = build_sigma_operator(self.training_coords, self.residual_cov)
        return self._cache["op"]


def fit_residual_covariance(coords, residuals, options: FitOptions = FitOptions(method="ML")):
    """Zero-mean ML estimate of (nugget, partial sill, range) for a residual field."""
    empty_design = np.zeros((len(residuals), 0))
    return _optimize_covariance(empty_design, np.asarray(residuals, dtype=float), coords,
                                "ML", None, options)


def _oob_predictions(forest: ForestModel, X: np.ndarray) -> np.ndarray:
    """Per-row mean over only the trees for which the row is out of bag."""
    n = len(X)
    sums = np.zeros(n)
    counts = np.zeros(n)
    for tree, oob in zip(forest.trees, forest.oob_indices):
        if len(oob) == 0:
            continue
        sums[oob] += tree.predict(X[oob])
        counts[oob] += 1
    full = None
    if np.any(counts == 0):  # rows in-bag everywhere fall back to the full-forest mean
        full = rf_predict(forest, X)
    with np.errstate(invalid="ignore"):
        out = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
    if full is not None:
        out = np.where(counts > 0, out, full)
    return out


def fit_rfrk(dataset: SpatialDataset, forest_options: dict | None = None, seed: int = 0,
             cov_options: FitOptions | None = None, oob_residuals: bool = False,
             forest: ForestModel | None = None) -> RFRKModel:
    """Fit the forest (unless one is supplied), compute training residuals, and
    ML-estimate the zero-mean exponential covariance of the residual field.

    ``oob_residuals=True`` uses out-of-bag forest predictions for the residuals
    instead of in-sample ones.
    """
    if forest is None:
        forest = forest_from_dataset(dataset, seed=seed, **(forest_options or {}))
    X = dataset.covariates
    if oob_residuals:
        fitted = _oob_predictions(forest, X)
    else:
        fitted = rf_predict(forest, X)
    residuals = dataset.response - fitted
    opts = cov_options or FitOptions(method="ML", seed=seed)
    params, _, converged = fit_residual_covariance(dataset.coords, residuals, opts)
    if not converged:
        warnings.warn("residual covariance optimizer did not converge; keeping best-so-far values")
    return RFRKModel(forest=forest, residual_cov=params, training_coords=dataset.coords,
                     residuals=residuals, converged=converged, oob_residuals=oob_residuals)


def rfrk_batch_predict(model: RFRKModel, coords, X):
    """RFRK mean and simple-kriging variance for a batch of points."""
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    rf_mean = rf_predict(model.forest, X)
    p = model.residual_cov
    op = model.sigma_operator()
    d = cross_distances(coords, model.training_coords)
    C = p.partial_sill * np.exp(-d / p.range)
    C[d <= COINCIDENT_TOL] += p.nugget
    si_resid = op.solve(model.residuals)
    mean = rf_mean + C @ si_resid
    var = p.sill - np.einsum("ij,ji->i", C, op.solve(C.T))
    var = np.maximum(var, 0.0)
    return [PredictionResult(float(m), float(v)) for m, v in zip(mean, var)]


def rfrk_predict(model: RFRKModel, new_location, new_covariates) -> PredictionResult:
    coords = np.array([[new_location.easting, new_location.northing]])
    X = np.atleast_2d(np.asarray(new_covariates, dtype=float))
    return rfrk_batch_predict(model, coords, X)[0]
