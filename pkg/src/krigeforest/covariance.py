"""Exponential covariance, dense and reduced-rank (Sherman-Morrison-Woodbury)
covariance operators, and knot placement for the reduced-rank method."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial.distance import cdist

from .data import Location, array_to_locations, locations_to_array

__all__ = [
    "CovarianceParams",
    "KnotSet",
    "SingularCovarianceError",
    "exp_cov",
    "pairwise_distances",
    "cross_distances",
    "full_sigma",
    "DenseSigma",
    "ReducedRankSigma",
    "reduced_sigma_inverse",
    "build_sigma_operator",
    "place_knots",
]


class SingularCovarianceError(RuntimeError):
    """Raised when a covariance factorization fails even after jitter."""


@dataclass(frozen=True)
class CovarianceParams:
    """Exponential-model parameters: nugget, partial sill (variance units) and
    range (km)."""

    nugget: float
    partial_sill: float
    range: float

    def __post_init__(self):
        if self.nugget < 0 or self.partial_sill < 0:
            raise ValueError("nugget and partial sill must be nonnegative")
        if self.nugget + self.partial_sill <= 0:
            raise ValueError("nugget + partial sill must be positive")
        if self.range <= 0:
            raise ValueError("range must be positive")

    @property
    def sill(self) -> float:
        return self.nugget + self.partial_sill


@dataclass(frozen=True)
class KnotSet:
    knots: tuple[Location, ...]

    def __post_init__(self):
        if len(self.knots) < 1:
            raise ValueError("need at least one knot")

    @property
    def r(self) -> int:
        return len(self.knots)

    @property
    def coords(self) -> np.ndarray:
        return locations_to_array(self.knots)


def exp_cov(d, params: CovarianceParams):
    """Covariance at distance d: psill * exp(-d/range), plus the nugget at d = 0."""
    d = np.asarray(d, dtype=float)
    out = params.partial_sill * np.exp(-d / params.range)
    out = out + np.where(d == 0.0, params.nugget, 0.0)
    return float(out) if out.ndim == 0 else out


def pairwise_distances(coords: np.ndarray) -> np.ndarray:
    return cdist(coords, coords)


def cross_distances(coords_a: np.ndarray, coords_b: np.ndarray) -> np.ndarray:
    return cdist(coords_a, coords_b)


def full_sigma(locations, params: CovarianceParams, distances=None) -> np.ndarray:
    """Dense covariance matrix R + nugget * I over the given locations."""
    if distances is None:
        coords = locations if isinstance(locations, np.ndarray) else locations_to_array(locations)
        distances = pairwise_distances(coords)
    sigma = params.partial_sill * np.exp(-distances / params.range)
    sigma[np.diag_indices_from(sigma)] += params.nugget
    return sigma


def _chol_with_jitter(matrix: np.ndarray, label: str):
    """Cholesky with a single bounded jitter retry (1e-10 * mean diagonal)."""
    try:
        return cho_factor(matrix, lower=True)
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-10 * np.trace(matrix) / matrix.shape[0]
    try:
        return cho_factor(matrix + jitter * np.eye(matrix.shape[0]), lower=True)
    except np.linalg.LinAlgError:
        raise SingularCovarianceError(f"{label} is not positive definite (jitter retry failed)") from None


class DenseSigma:
    """Dense covariance operator backed by a Cholesky factorization."""

    def __init__(self, sigma: np.ndarray):
        self.n = sigma.shape[0]
        self._cho = _chol_with_jitter(sigma, "covariance matrix")

    def solve(self, b: np.ndarray) -> np.ndarray:
        return cho_solve(self._cho, b)

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self._cho[0]))))


class ReducedRankSigma:
    """Operator for Sigma = S K^-1 S' + nugget * I using only r x r factorizations.

    solve() applies the Sherman-Morrison-Woodbury identity
    Sigma^-1 = nugget^-1 [I - S (nugget K + S'S)^-1 S'] and logdet() the
    matrix-determinant lemma.
    """

    def __init__(self, S: np.ndarray, K: np.ndarray, nugget: float):
        if nugget <= 0:
            raise ValueError("reduced-rank operator requires a positive nugget")
        self.n, self.r = S.shape
        self.S = S
        self.nugget = nugget
        self._cho_K = _chol_with_jitter(K, "knot covariance K")
        inner = nugget * K + S.T @ S
        self._cho_inner = _chol_with_jitter(inner, "nugget*K + S'S")

    def solve(self, b: np.ndarray) -> np.ndarray:
        return (b - self.S @ cho_solve(self._cho_inner, self.S.T @ b)) / self.nugget

    def logdet(self) -> float:
        # |Sigma| = nugget^(n-r) |nugget K + S'S| / |K|
        ld_inner = 2.0 * float(np.sum(np.log(np.diag(self._cho_inner[0]))))
        ld_K = 2.0 * float(np.sum(np.log(np.diag(self._cho_K[0]))))
        return (self.n - self.r) * math.log(self.nugget) + ld_inner - ld_K


def reduced_sigma_inverse(S: np.ndarray, K: np.ndarray, nugget: float) -> ReducedRankSigma:
    return ReducedRankSigma(S, K, nugget)


def build_sigma_operator(coords: np.ndarray, params: CovarianceParams, knot_coords=None,
                         distances=None, knot_distances=None, knot_self_distances=None):
    """Construct the covariance operator for a set of locations.

    With knot_coords, builds the reduced-rank operator from knot cross- and
    self-covariances; otherwise a dense Cholesky operator.  Precomputed
    distance matrices may be passed to avoid recomputation inside optimizer
    loops.
    """
    if knot_coords is None:
        return DenseSigma(full_sigma(coords, params, distances=distances))
    if knot_distances is None:
        knot_distances = cross_distances(coords, knot_coords)
    if knot_self_distances is None:
        knot_self_distances = pairwise_distances(knot_coords)
    S = params.partial_sill * np.exp(-knot_distances / params.range)
    K = params.partial_sill * np.exp(-knot_self_distances / params.range)
    return ReducedRankSigma(S, K, params.nugget)


def _kmeans(coords: np.ndarray, r: int, rng: np.random.Generator, iters: int = 50):
    """One Lloyd run seeded from r distinct data points; returns (centroids, inertia)."""
    n = coords.shape[0]
    centers = coords[rng.choice(n, size=r, replace=False)].copy()
    for _ in range(iters):
        d2 = cdist(coords, centers, "sqeuclidean")
        assign = np.argmin(d2, axis=1)
        new_centers = centers.copy()
        for j in range(r):
            members = coords[assign == j]
            if len(members):
                new_centers[j] = members.mean(axis=0)
        if np.allclose(new_centers, centers):
            centers = new_centers
            break
        centers = new_centers
    d2 = cdist(coords, centers, "sqeuclidean")
    inertia = float(np.min(d2, axis=1).sum())
    return centers, inertia


def default_knot_count(n: int) -> int:
    return min(math.ceil(n / 10), 200)


def place_knots(locations, r: int, seed: int = 0, restarts: int = 25) -> KnotSet:
    """Space-filling knots via seeded k-means centroids on the coordinates.

    r = n returns the data locations themselves; r = 1 the centroid.
    """
    coords = locations if isinstance(locations, np.ndarray) else locations_to_array(locations)
    n = coords.shape[0]
    if not 1 <= r <= n:
        raise ValueError(f"knot count r={r} must be in [1, n={n}]")
    if r == n:
        return KnotSet(array_to_locations(coords))
    if r == 1:
        return KnotSet(array_to_locations(coords.mean(axis=0)[None, :]))
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        centers, inertia = _kmeans(coords, r, rng)
        if best is None or inertia < best[1]:
            best = (centers, inertia)
    return KnotSet(array_to_locations(best[0]))
