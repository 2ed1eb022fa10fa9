"""End-to-end model pipelines (OK, LM, SLM, LM-TF, SLM-TF, RF, RFRK) sharing a
common predict interface, for cross-validation and the CLI."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import SpatialDataset
from .design import DesignRecipe, Intercept, Raw, build_design, dummy_constructors
from .evaluation import PredictionBatch
from .forest import forest_from_dataset, qrf_quantile, rf_predict
from .kriging import Z_QUANTILES, batch_predict
from .rfrk import fit_rfrk, rfrk_batch_predict
from .selection import prune_slm, stepwise_lm
from .slm import FitOptions, NonConvergenceError, fit_slm
from .transform import select_all

__all__ = ["PipelineConfig", "MODEL_NAMES", "fit_pipeline", "raw_recipe", "intercept_recipe"]

MODEL_NAMES = ("ok", "lm", "slm", "lm-tf", "slm-tf", "rf", "rfrk")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    fit_options: FitOptions = field(default_factory=FitOptions)
    trees: int = 1000
    mtry: int | None = None
    min_node_size: int = 5
    n_threads: int = 1
    select: bool = False           # run the two-phase covariate selection (slm-tf)
    literal_tstat: bool = False
    oob_residuals: bool = False
    zero_threshold: float = 0.02


def intercept_recipe() -> DesignRecipe:
    return DesignRecipe([Intercept()])


def raw_recipe(dataset: SpatialDataset) -> DesignRecipe:
    """Intercept + raw numeric covariates + categorical dummies."""
    constructors = [Intercept()]
    for col in dataset.columns:
        if not col.is_categorical:
            constructors.append(Raw(col.name))
    for col in dataset.columns:
        if col.is_categorical:
            constructors.extend(dummy_constructors(dataset, col.name))
    return DesignRecipe(constructors)


class LMPipeline:
    """Ordinary least squares with Gaussian prediction intervals including the
    leverage term."""

    def __init__(self, dataset: SpatialDataset, recipe: DesignRecipe):
        X = build_design(recipe, dataset)
        y = dataset.response
        self.recipe = recipe
        self.coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        resid = y - X @ self.coef
        dof = max(len(y) - X.shape[1], 1)
        self.s2 = float(resid @ resid) / dof
        self.XtX_inv = np.linalg.pinv(X.T @ X)
        self.k_params = X.shape[1]

    def predict_batch(self, dataset: SpatialDataset) -> PredictionBatch:
        X = build_design(self.recipe, dataset)
        mean = X @ self.coef
        var = self.s2 * (1.0 + np.einsum("ij,ij->i", X @ self.XtX_inv, X))
        return _gaussian_batch(mean, var)


class SLMPipeline:
    def __init__(self, dataset: SpatialDataset, recipe: DesignRecipe, options: FitOptions):
        try:
            self.model, self.diagnostics = fit_slm(dataset, recipe, options)
        except NonConvergenceError as exc:
            self.model, self.diagnostics = exc.model, exc.diagnostics
        self.k_params = self.model.k + 3

    def predict_batch(self, dataset: SpatialDataset) -> PredictionBatch:
        results = batch_predict(self.model, dataset)
        mean = np.array([r.mean for r in results])
        var = np.array([r.variance for r in results])
        return _gaussian_batch(mean, var)


class PrunedSLMPipeline(SLMPipeline):
    def __init__(self, dataset, recipe, options, literal_tstat=False):
        reduced, _ = stepwise_lm(dataset, recipe)
        self.model, trace = prune_slm(dataset, reduced, options, literal_tstat=literal_tstat)
        self.diagnostics = trace.final_diagnostics
        self.k_params = self.model.k + 3


class RFPipeline:
    """Random forest with quantile-regression-forest prediction intervals."""

    def __init__(self, dataset: SpatialDataset, config: PipelineConfig):
        self.forest = forest_from_dataset(
            dataset, n_trees=config.trees, m=config.mtry,
            min_node_size=config.min_node_size, seed=config.seed,
            n_threads=config.n_threads,
        )
        self.k_params = None

    def predict_batch(self, dataset: SpatialDataset) -> PredictionBatch:
        X = dataset.covariates
        mean = rf_predict(self.forest, X)
        q = qrf_quantile(self.forest, X, [0.025, 0.05, 0.95, 0.975])
        return PredictionBatch(mean=mean, lower90=q[:, 1], upper90=q[:, 2],
                               lower95=q[:, 0], upper95=q[:, 3])


class RFRKPipeline:
    def __init__(self, dataset: SpatialDataset, config: PipelineConfig):
        self.model = fit_rfrk(
            dataset,
            forest_options={"n_trees": config.trees, "m": config.mtry,
                            "min_node_size": config.min_node_size,
                            "n_threads": config.n_threads},
            seed=config.seed,
            cov_options=replace(config.fit_options, method="ML"),
            oob_residuals=config.oob_residuals,
        )
        self.k_params = None

    def predict_batch(self, dataset: SpatialDataset) -> PredictionBatch:
        results = rfrk_batch_predict(self.model, dataset.coords, dataset.covariates)
        mean = np.array([r.mean for r in results])
        var = np.array([r.variance for r in results])
        return _gaussian_batch(mean, var)


def _gaussian_batch(mean, var):
    se = np.sqrt(np.maximum(var, 0.0))
    return PredictionBatch(
        mean=mean,
        lower90=mean - Z_QUANTILES[0.90] * se,
        upper90=mean + Z_QUANTILES[0.90] * se,
        lower95=mean - Z_QUANTILES[0.95] * se,
        upper95=mean + Z_QUANTILES[0.95] * se,
    )


def fit_pipeline(name: str, dataset: SpatialDataset, config: PipelineConfig = PipelineConfig()):
    """Fit one of the named model pipelines on a training dataset."""
    name = name.lower()
    options = replace(config.fit_options, seed=config.seed)
    if name == "ok":
        return SLMPipeline(dataset, intercept_recipe(), options)
    if name == "lm":
        return LMPipeline(dataset, raw_recipe(dataset))
    if name == "slm":
        return SLMPipeline(dataset, raw_recipe(dataset), options)
    if name == "lm-tf":
        recipe = select_all(dataset, zero_threshold=config.zero_threshold)
        return LMPipeline(dataset, recipe)
    if name == "slm-tf":
        recipe = select_all(dataset, zero_threshold=config.zero_threshold)
        if config.select:
            return PrunedSLMPipeline(dataset, recipe, options, literal_tstat=config.literal_tstat)
        return SLMPipeline(dataset, recipe, options)
    if name == "rf":
        return RFPipeline(dataset, config)
    if name == "rfrk":
        return RFRKPipeline(dataset, config)
    raise ValueError(f"unknown model {name!r}; choose from {MODEL_NAMES}")
