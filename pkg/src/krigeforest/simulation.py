"""Simulation study: spatially autocorrelated data generation on the unit
square, calibration of the nonlinearity and signal-strength coefficients, and
the 8-case comparison of LM, SLM, RF and RFRK."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .covariance import CovarianceParams, full_sigma
from .data import from_arrays
from .evaluation import interval_coverage, rmspe
from .forest import forest_from_dataset, qrf_quantile, rf_predict
from .pipelines import LMPipeline, SLMPipeline, _gaussian_batch, raw_recipe
from .rfrk import fit_rfrk, rfrk_batch_predict
from .slm import FitOptions

__all__ = [
    "SimCase",
    "SimDataset",
    "CASES",
    "sample_grf",
    "calibrate_a",
    "calibrate_c",
    "generate_dataset",
    "run_case",
    "run_all_cases",
    "CaseResult",
]

SIM_MODELS = ("lm", "slm", "rf", "rfrk")


@dataclass(frozen=True)
class SimCase:
    id: int
    dominance: str               # "nonlinear" or "linear"
    r_squared_target: float      # 0.1 or 0.9
    nugget: float                # 1 or 9
    partial_sill: float          # 9 or 1
    range: float = 0.5
    n_train: int = 500
    n_test: int = 1000
    replicates: int = 20

    def __post_init__(self):
        if self.dominance not in ("nonlinear", "linear"):
            raise ValueError("dominance must be 'nonlinear' or 'linear'")
        if (self.nugget, self.partial_sill) not in ((9.0, 1.0), (1.0, 9.0)):
            raise ValueError("(nugget, partial_sill) must be (9,1) or (1,9)")
        if self.r_squared_target not in (0.1, 0.9):
            raise ValueError("r_squared_target must be 0.1 or 0.9")

    @property
    def nonlinear_proportion(self) -> float:
        return 0.9 if self.dominance == "nonlinear" else 0.1

    @property
    def cov_params(self) -> CovarianceParams:
        return CovarianceParams(self.nugget, self.partial_sill, self.range)


CASES = (
    SimCase(1, "nonlinear", 0.1, 9.0, 1.0),
    SimCase(2, "nonlinear", 0.1, 1.0, 9.0),
    SimCase(3, "nonlinear", 0.9, 9.0, 1.0),
    SimCase(4, "nonlinear", 0.9, 1.0, 9.0),
    SimCase(5, "linear", 0.1, 9.0, 1.0),
    SimCase(6, "linear", 0.1, 1.0, 9.0),
    SimCase(7, "linear", 0.9, 9.0, 1.0),
    SimCase(8, "linear", 0.9, 1.0, 9.0),
)


def nonlinear_term(x: np.ndarray) -> np.ndarray:
    return np.sin(5.0 * math.pi * x[:, 0] * x[:, 1])


def linear_term(x: np.ndarray) -> np.ndarray:
    return 2.0 * x[:, 2] - x[:, 3]


def sample_grf(coords: np.ndarray, params: CovarianceParams, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean Gaussian field via Cholesky of the spatial covariance plus
    independent nugget noise."""
    n = len(coords)
    out = np.zeros(n)
    if params.partial_sill > 0:
        spatial = full_sigma(coords, CovarianceParams(0.0, params.partial_sill, params.range))
        try:
            L = np.linalg.cholesky(spatial)
        except np.linalg.LinAlgError:
            jitter = 1e-10 * np.trace(spatial) / n
            L = np.linalg.cholesky(spatial + jitter * np.eye(n))
        out += L @ rng.standard_normal(n)
    if params.nugget > 0:
        out += math.sqrt(params.nugget) * rng.standard_normal(n)
    return out


def calibrate_a(x: np.ndarray, nonlinear_proportion: float) -> float:
    """Scale on the nonlinear term so it explains the target share of the
    systematic variance (empirical variances; g-h cross-covariance neglected)."""
    var_g = float(np.var(nonlinear_term(x)))
    var_h = float(np.var(linear_term(x)))
    if var_g <= 0 or var_h <= 0:
        raise ValueError("degenerate covariate sample: zero variance term")
    prop = nonlinear_proportion
    return math.sqrt(prop / (1.0 - prop) * var_h / var_g)


def calibrate_c(x: np.ndarray, a: float, delta_variance: float, r_squared: float) -> float:
    """Overall signal scale achieving the target empirical R-squared given the
    error-term variance."""
    var_f = float(np.var(a * nonlinear_term(x) + linear_term(x)))
    if var_f <= 0 or delta_variance <= 0:
        raise ValueError("degenerate variance in calibration")
    return math.sqrt(r_squared / (1.0 - r_squared) * delta_variance / var_f)


@dataclass
class SimDataset:
    coords: np.ndarray
    x: np.ndarray
    y: np.ndarray
    a: float
    c: float
    delta: np.ndarray
    n_train: int

    @property
    def f(self) -> np.ndarray:
        return self.c * (self.a * nonlinear_term(self.x) + linear_term(self.x))

    def realized_r_squared(self) -> float:
        f = self.f
        return float(np.var(f) / (np.var(f) + np.var(self.delta)))

    def realized_nonlinear_proportion(self) -> float:
        ag = self.a * nonlinear_term(self.x)
        h = linear_term(self.x)
        return float(np.var(ag) / np.var(ag + h))

    def train_dataset(self):
        return from_arrays(self.coords[: self.n_train], self.y[: self.n_train],
                           self.x[: self.n_train], names=["x1", "x2", "x3", "x4"])

    def test_dataset(self):
        return from_arrays(self.coords[self.n_train:], self.y[self.n_train:],
                           self.x[self.n_train:], names=["x1", "x2", "x3", "x4"])


def generate_dataset(case: SimCase, rng: np.random.Generator,
                     n_train: int | None = None, n_test: int | None = None) -> SimDataset:
    """One replicate: uniform locations and covariates, calibrated a and c, and
    a Cholesky-sampled autocorrelated error field.

    c is calibrated against the realized sample variance of the error field so
    the empirical R-squared hits its target even under strong autocorrelation.
    """
    n_train = case.n_train if n_train is None else n_train
    n_test = case.n_test if n_test is None else n_test
    n = n_train + n_test
    coords = rng.uniform(0.0, 1.0, size=(n, 2))
    x = rng.uniform(0.0, 1.0, size=(n, 4))
    a = calibrate_a(x, case.nonlinear_proportion)
    delta = sample_grf(coords, case.cov_params, rng)
    delta_var = float(np.var(delta))
    if delta_var <= 0:
        delta_var = case.nugget + case.partial_sill
    c = calibrate_c(x, a, delta_var, case.r_squared_target)
    y = c * (a * nonlinear_term(x) + linear_term(x)) + delta
    return SimDataset(coords=coords, x=x, y=y, a=a, c=c, delta=delta, n_train=n_train)


@dataclass
class CaseResult:
    case: SimCase
    a_mean: float
    c_mean: float
    rmspe: dict = field(default_factory=dict)
    pic90: dict = field(default_factory=dict)
    replicates_used: int = 0


def _sim_fit_options(seed: int) -> FitOptions:
    return FitOptions(method="REML", restarts=2, tolerance=1e-4, max_iter=300, seed=seed)


def _evaluate_replicate(data: SimDataset, trees: int, seed: int):
    train = data.train_dataset()
    test = data.test_dataset()
    y_test = test.response
    out_rmspe, out_pic = {}, {}

    lm = LMPipeline(train, raw_recipe(train))
    batch = lm.predict_batch(test)
    out_rmspe["lm"] = rmspe(y_test, batch.mean)
    out_pic["lm"] = interval_coverage(y_test, batch.lower90, batch.upper90)

    slm = SLMPipeline(train, raw_recipe(train), _sim_fit_options(seed))
    batch = slm.predict_batch(test)
    out_rmspe["slm"] = rmspe(y_test, batch.mean)
    out_pic["slm"] = interval_coverage(y_test, batch.lower90, batch.upper90)

    forest = forest_from_dataset(train, n_trees=trees, seed=seed)
    rf_mean = rf_predict(forest, test.covariates)
    q = qrf_quantile(forest, test.covariates, [0.05, 0.95])
    out_rmspe["rf"] = rmspe(y_test, rf_mean)
    out_pic["rf"] = interval_coverage(y_test, q[:, 0], q[:, 1])

    # out-of-bag residuals: in-sample forest residuals understate the error
    # variance and collapse the kriging intervals
    rfrk = fit_rfrk(train, forest=forest, seed=seed, oob_residuals=True,
                    cov_options=FitOptions(method="ML", restarts=2, tolerance=1e-4,
                                           max_iter=300, seed=seed))
    results = rfrk_batch_predict(rfrk, test.coords, test.covariates)
    mean = np.array([r.mean for r in results])
    var = np.array([r.variance for r in results])
    batch = _gaussian_batch(mean, var)
    out_rmspe["rfrk"] = rmspe(y_test, batch.mean)
    out_pic["rfrk"] = interval_coverage(y_test, batch.lower90, batch.upper90)
    return out_rmspe, out_pic


def run_case(case: SimCase, seed: int = 0, trees: int = 1000,
             n_train: int | None = None, n_test: int | None = None,
             replicates: int | None = None) -> CaseResult:
    """Generate and evaluate all replicates of one case; per-model RMSPE and
    PIC90 are averaged over the replicates that fit successfully."""
    replicates = case.replicates if replicates is None else replicates
    sums_rmspe = {m: 0.0 for m in SIM_MODELS}
    sums_pic = {m: 0.0 for m in SIM_MODELS}
    a_values, c_values = [], []
    used = 0
    for rep in range(replicates):
        rng = np.random.default_rng([seed, case.id, rep])
        data = generate_dataset(case, rng, n_train=n_train, n_test=n_test)
        a_values.append(data.a)
        c_values.append(data.c)
        try:
            rep_rmspe, rep_pic = _evaluate_replicate(data, trees, seed=rep)
        except Exception as exc:
            warnings.warn(f"case {case.id} replicate {rep} failed: {exc}")
            continue
        used += 1
        for m in SIM_MODELS:
            sums_rmspe[m] += rep_rmspe[m]
            sums_pic[m] += rep_pic[m]
    if used == 0:
        raise RuntimeError(f"all replicates failed for case {case.id}")
    return CaseResult(
        case=case,
        a_mean=float(np.mean(a_values)),
        c_mean=float(np.mean(c_values)),
        rmspe={m: sums_rmspe[m] / used for m in SIM_MODELS},
        pic90={m: sums_pic[m] / used for m in SIM_MODELS},
        replicates_used=used,
    )


def run_all_cases(seed: int = 0, trees: int = 1000, fast: bool = False):
    """All 8 cases; ``fast`` shrinks to n_train=200 and 10 replicates for CI."""
    kwargs = {}
    if fast:
        kwargs = {"n_train": 200, "replicates": 10}
    return [run_case(case, seed=seed, trees=trees, **kwargs) for case in CASES]
