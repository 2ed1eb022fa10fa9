"""Design-matrix recipes: intercept, raw, indicator, Box-Cox and dummy columns."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SpatialDataset

__all__ = [
    "Intercept",
    "Raw",
    "IndicatorNonzero",
    "BoxCox",
    "BoxCoxSquared",
    "CategoryDummy",
    "DesignRecipe",
    "DesignError",
    "boxcox",
    "build_design",
]


class DesignError(ValueError):
    """Raised when a recipe cannot be applied to a dataset."""


def boxcox(x, lambda1: float, lambda2: float):
    """Power transform ((x + l2)^l1 - 1)/l1, or log(x + l2) when l1 = 0.

    Requires x + lambda2 > 0 elementwise.
    """
    x = np.asarray(x, dtype=float)
    shifted = x + lambda2
    if np.any(shifted <= 0.0):
        bad = float(x[shifted <= 0.0].flat[0]) if x.ndim else float(x)
        raise DesignError(
            f"box-cox domain violation: value {bad} with lambda2={lambda2} gives x+lambda2 <= 0"
        )
    if lambda1 == 0.0:
        return np.log(shifted)
    return (shifted**lambda1 - 1.0) / lambda1


@dataclass(frozen=True)
class Intercept:
    label = "intercept"

    def columns(self, dataset):
        return [np.ones(dataset.n)]

    def names(self):
        return ["intercept"]


@dataclass(frozen=True)
class Raw:
    covariate: str

    def columns(self, dataset):
        return [dataset.covariate(self.covariate).astype(float)]

    def names(self):
        return [self.covariate]


@dataclass(frozen=True)
class IndicatorNonzero:
    covariate: str

    def columns(self, dataset):
        return [(dataset.covariate(self.covariate) != 0.0).astype(float)]

    def names(self):
        return [f"I({self.covariate}!=0)"]


def _boxcox_column(dataset, covariate, lambda1, lambda2, times_indicator):
    x = dataset.covariate(covariate)
    if times_indicator:
        out = np.zeros_like(x, dtype=float)
        nz = x != 0.0
        if np.any((x[nz] + lambda2) <= 0.0):
            bad = float(x[nz][(x[nz] + lambda2) <= 0.0][0])
            raise DesignError(
                f"box-cox domain violation for {covariate}: value {bad} with lambda2={lambda2}"
            )
        out[nz] = boxcox(x[nz], lambda1, lambda2)
        return out
    try:
        return boxcox(x, lambda1, lambda2)
    except DesignError as exc:
        raise DesignError(f"covariate {covariate}: {exc}") from None


@dataclass(frozen=True)
class BoxCox:
    """Box-Cox column; with times_indicator the transform is interacted with
    the nonzero indicator (zero entries map to zero)."""

    covariate: str
    lambda1: float
    lambda2: float
    times_indicator: bool = False

    def columns(self, dataset):
        return [_boxcox_column(dataset, self.covariate, self.lambda1, self.lambda2, self.times_indicator)]

    def names(self):
        tag = f"bc({self.covariate};{self.lambda1},{self.lambda2})"
        return [f"{tag}*I" if self.times_indicator else tag]


@dataclass(frozen=True)
class BoxCoxSquared:
    covariate: str
    lambda1: float
    lambda2: float
    times_indicator: bool = False

    def columns(self, dataset):
        col = _boxcox_column(dataset, self.covariate, self.lambda1, self.lambda2, self.times_indicator)
        return [col**2]

    def names(self):
        tag = f"bc({self.covariate};{self.lambda1},{self.lambda2})^2"
        return [f"{tag}*I" if self.times_indicator else tag]


@dataclass(frozen=True)
class CategoryDummy:
    covariate: str
    level: float

    def columns(self, dataset):
        return [(dataset.covariate(self.covariate) == self.level).astype(float)]

    def names(self):
        return [f"{self.covariate}=={self.level:g}"]


CONSTRUCTOR_TYPES = (Intercept, Raw, IndicatorNonzero, BoxCox, BoxCoxSquared, CategoryDummy)


class DesignRecipe:
    """Ordered list of column constructors defining a fixed-width design matrix."""

    def __init__(self, constructors):
        constructors = tuple(constructors)
        if sum(isinstance(c, Intercept) for c in constructors) > 1:
            raise DesignError("recipe has more than one intercept")
        for c in constructors:
            if not isinstance(c, CONSTRUCTOR_TYPES):
                raise DesignError(f"unknown constructor {c!r}")
        self.constructors = constructors

    def __len__(self):
        return len(self.constructors)

    def __iter__(self):
        return iter(self.constructors)

    def __eq__(self, other):
        return isinstance(other, DesignRecipe) and self.constructors == other.constructors

    def __repr__(self):
        return f"DesignRecipe({list(self.constructors)!r})"

    @property
    def width(self) -> int:
        return len(self.constructors)

    def column_names(self):
        names = []
        for c in self.constructors:
            names.extend(c.names())
        return names

    def drop(self, indices) -> "DesignRecipe":
        indices = set(indices)
        return DesignRecipe([c for j, c in enumerate(self.constructors) if j not in indices])

    def covariate_names(self):
        return sorted({c.covariate for c in self.constructors if hasattr(c, "covariate")})


def dummy_constructors(dataset, covariate, drop_reference=True):
    """One dummy per level of a categorical covariate, dropping the lowest
    level as reference when an intercept is present."""
    levels = np.unique(dataset.covariate(covariate))
    if drop_reference:
        levels = levels[1:]
    return [CategoryDummy(covariate, float(level)) for level in levels]


def build_design(recipe: DesignRecipe, dataset: SpatialDataset) -> np.ndarray:
    """Apply a recipe to a dataset, returning the n x k design matrix."""
    for name in recipe.covariate_names():
        dataset.column_index(name)  # raises KeyError for unknown covariates
    cols = []
    for constructor in recipe:
        cols.extend(constructor.columns(dataset))
    if not cols:
        return np.empty((dataset.n, 0))
    return np.column_stack(cols)
