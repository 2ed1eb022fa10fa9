"""Spatial regression vs random forest toolkit: spatial linear models with
exponential covariance, universal/ordinary kriging, Box-Cox covariate
transformation, two-phase covariate selection, quantile random forests,
random forest residual kriging, and a cross-validation harness."""

from .covariance import (
    CovarianceParams,
    KnotSet,
    build_sigma_operator,
    default_knot_count,
    exp_cov,
    full_sigma,
    place_knots,
)
from .data import CovariateInfo, DataError, Location, SpatialDataset, from_arrays, load_csv
from .design import (
    BoxCox,
    BoxCoxSquared,
    CategoryDummy,
    DesignRecipe,
    IndicatorNonzero,
    Intercept,
    Raw,
    boxcox,
    build_design,
    dummy_constructors,
)
from .evaluation import CVReport, PredictionBatch, interval_coverage, kfold_cv, rmspe
from .forest import (
    ForestModel,
    fit_forest,
    forest_from_dataset,
    permutation_importance,
    qrf_quantile,
    rf_predict,
)
from .kriging import PredictionResult, batch_predict, ok_predict, predict_points, uk_predict
from .model_io import ModelFormatError, deserialize_model, serialize_model
from .pipelines import MODEL_NAMES, PipelineConfig, fit_pipeline
from .rfrk import RFRKModel, fit_rfrk, rfrk_batch_predict, rfrk_predict
from .selection import prune_slm, stepwise_lm
from .simulation import CASES, SimCase, generate_dataset, run_all_cases, run_case
from .slm import (
    FitOptions,
    FittedSLM,
    NonConvergenceError,
    SLMDiagnostics,
    effective_range,
    fit_slm,
)
from .transform import TransformSpec, select_all, select_transform

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
