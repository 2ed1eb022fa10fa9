"""Universal- and ordinary-kriging prediction with kriging variances and
Gaussian prediction intervals."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .covariance import cross_distances
from .data import Location, SpatialDataset
from .design import DesignRecipe, Intercept, build_design
from .slm import FittedSLM

__all__ = ["PredictionResult", "uk_predict", "ok_predict", "batch_predict", "Z_QUANTILES"]

#: Gaussian quantiles used for the 90% and 95% prediction intervals.
Z_QUANTILES = {0.90: 1.645, 0.95: 1.960}

#: Distances below this (km) count as coincident for the nugget term.
COINCIDENT_TOL = 1e-12


@dataclass(frozen=True)
class PredictionResult:
    mean: float
    variance: float

    def interval(self, level: float = 0.90):
        try:
            z = Z_QUANTILES[level]
        except KeyError:
            raise ValueError(f"unsupported interval level {level}; use 0.90 or 0.95") from None
        half = z * np.sqrt(self.variance)
        return (self.mean - half, self.mean + half)


def _prediction_state(model: FittedSLM):
    """Quantities shared by all predictions from one model."""
    cache = model._cache
    if "pred" not in cache:
        op = model.sigma_operator()
        X = model.training_design
        resid = model.training_response - (X @ model.beta if model.k else 0.0)
        cache["pred"] = {
            "si_resid": op.solve(resid),
            "si_X": op.solve(X) if model.k else np.zeros((len(model.training_response), 0)),
            "op": op,
        }
    return cache["pred"]


def _cross_cov(model: FittedSLM, new_coords: np.ndarray) -> np.ndarray:
    d = cross_distances(new_coords, model.training_coords)
    p = model.cov_params
    c = p.partial_sill * np.exp(-d / p.range)
    c[d <= COINCIDENT_TOL] += p.nugget
    return c


def batch_predict(model: FittedSLM, new_dataset: SpatialDataset):
    """Universal-kriging predictions for every row of a dataset; shared
    factorizations are computed once."""
    design = build_design(model.recipe, new_dataset)
    return predict_points(model, new_dataset.coords, design)


def predict_points(model: FittedSLM, new_coords: np.ndarray, new_design: np.ndarray):
    """Kriging mean/variance at arbitrary points given their design rows."""
    state = _prediction_state(model)
    op = state["op"]
    p = model.cov_params
    C = _cross_cov(model, new_coords)  # m x n
    mean = C @ state["si_resid"]
    if model.k:
        mean = mean + new_design @ model.beta
    Si_C = op.solve(C.T)  # n x m
    var = p.sill - np.einsum("ij,ji->i", C, Si_C)
    if model.k:
        T = new_design - C @ state["si_X"]  # m x k
        var = var + np.einsum("ij,ij->i", T @ model.beta_cov, T)
    if np.any(var < -1e-10):
        warnings.warn("kriging variance below -1e-10; clamping to zero")
    var = np.maximum(var, 0.0)
    return [PredictionResult(float(m), float(v)) for m, v in zip(mean, var)]


def uk_predict(model: FittedSLM, new_location: Location, new_covariates) -> PredictionResult:
    """Universal-kriging prediction at one location.

    ``new_covariates`` is a mapping of covariate name to value; it must cover
    every covariate the model recipe uses.
    """
    ds = _single_row_dataset(model, new_location, new_covariates)
    return batch_predict(model, ds)[0]


def ok_predict(model: FittedSLM, new_location: Location) -> PredictionResult:
    """Ordinary kriging: the intercept-only special case of uk_predict."""
    if not _is_intercept_only(model.recipe):
        raise ValueError("ok_predict requires an intercept-only model")
    design = np.ones((1, 1))
    coords = np.array([[new_location.easting, new_location.northing]])
    return predict_points(model, coords, design)[0]


def _is_intercept_only(recipe: DesignRecipe) -> bool:
    return len(recipe) == 1 and isinstance(recipe.constructors[0], Intercept)


def _single_row_dataset(model: FittedSLM, location: Location, covariates) -> SpatialDataset:
    from .data import from_arrays

    needed = model.recipe.covariate_names()
    missing = [name for name in needed if name not in covariates]
    if missing:
        raise KeyError(f"missing covariates for prediction: {missing}")
    values = np.array([[float(covariates[name]) for name in needed]])
    return from_arrays(
        np.array([[location.easting, location.northing]]),
        np.zeros(1),
        values if needed else np.zeros((1, 0)),
        names=needed,
    )
