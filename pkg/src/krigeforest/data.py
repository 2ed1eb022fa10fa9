"""Core spatial dataset types and CSV ingestion."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Location",
    "CovariateInfo",
    "SpatialDataset",
    "DataError",
    "load_csv",
]

#: Two locations closer than this (km) are treated as duplicates.
DUPLICATE_TOL = 1e-9


class DataError(ValueError):
    """Raised for malformed input data (missing columns, bad cells, duplicates)."""


@dataclass(frozen=True)
class Location:
    """A planar location in projected km coordinates."""

    easting: float
    northing: float

    def __post_init__(self):
        if not (math.isfinite(self.easting) and math.isfinite(self.northing)):
            raise DataError(f"non-finite coordinates ({self.easting}, {self.northing})")


@dataclass(frozen=True)
class CovariateInfo:
    name: str
    is_categorical: bool = False
    zero_fraction: float = 0.0


def locations_to_array(locations) -> np.ndarray:
    """Stack Locations into an (n, 2) array of (easting, northing)."""
    return np.array([(loc.easting, loc.northing) for loc in locations], dtype=float)


def array_to_locations(coords: np.ndarray) -> tuple[Location, ...]:
    return tuple(Location(float(e), float(n)) for e, n in np.asarray(coords, dtype=float))


class SpatialDataset:
    """Immutable bundle of locations, response and covariates.

    Covariate values are stored as a dense float matrix; categorical columns
    hold numeric level codes and are flagged in the column metadata.
    """

    def __init__(self, locations, response, covariates, columns, allow_duplicates=False):
        self.locations = tuple(locations)
        self.response = np.asarray(response, dtype=float).copy()
        self.response.flags.writeable = False
        self.covariates = np.asarray(covariates, dtype=float).reshape(len(self.locations), -1).copy()
        self.covariates.flags.writeable = False
        self.columns = tuple(columns)
        self._validate(allow_duplicates)

    def _validate(self, allow_duplicates=False):
        n = len(self.locations)
        if self.response.shape != (n,):
            raise DataError(f"response length {self.response.shape} does not match n={n}")
        if self.covariates.shape[0] != n:
            raise DataError("covariate row count does not match number of locations")
        if len(self.columns) != self.covariates.shape[1]:
            raise DataError("column metadata does not match covariate matrix width")
        if not np.all(np.isfinite(self.response)):
            bad = int(np.flatnonzero(~np.isfinite(self.response))[0])
            raise DataError(f"non-finite response at row {bad}")
        if self.covariates.size and not np.all(np.isfinite(self.covariates)):
            r, c = np.argwhere(~np.isfinite(self.covariates))[0]
            raise DataError(f"non-finite covariate at row {int(r)}, column {self.columns[int(c)].name}")
        coords = self.coords
        if n > 1 and not allow_duplicates:
            order = np.lexsort(coords.T)
            diffs = np.linalg.norm(np.diff(coords[order], axis=0), axis=1)
            if np.any(diffs <= DUPLICATE_TOL):
                i = int(np.flatnonzero(diffs <= DUPLICATE_TOL)[0])
                a, b = sorted((int(order[i]), int(order[i + 1])))
                raise DataError(f"duplicate locations at rows {a} and {b}")
        # keep declared zero fractions in sync with the data
        for j, col in enumerate(self.columns):
            observed = float(np.mean(self.covariates[:, j] == 0.0)) if n else 0.0
            if abs(observed - col.zero_fraction) > 1e-12:
                raise DataError(
                    f"zero_fraction for {col.name} is {col.zero_fraction}, observed {observed}"
                )

    @property
    def n(self) -> int:
        return len(self.locations)

    @property
    def p(self) -> int:
        return len(self.columns)

    @property
    def coords(self) -> np.ndarray:
        return locations_to_array(self.locations)

    def column_index(self, name: str) -> int:
        for j, col in enumerate(self.columns):
            if col.name == name:
                return j
        raise KeyError(f"unknown covariate {name!r}")

    def covariate(self, name: str) -> np.ndarray:
        return self.covariates[:, self.column_index(name)]

    def subset(self, rows) -> "SpatialDataset":
        rows = np.asarray(rows)
        return from_arrays(
            self.coords[rows],
            self.response[rows],
            self.covariates[rows],
            names=[c.name for c in self.columns],
            categorical={c.name for c in self.columns if c.is_categorical},
        )


def from_arrays(coords, response, covariates, names=None, categorical=(),
                allow_duplicates=False) -> SpatialDataset:
    """Build a validated SpatialDataset from plain arrays.

    zero_fraction metadata is computed from the data; ``categorical`` names
    columns holding level codes.
    """
    covariates = np.asarray(covariates, dtype=float)
    if covariates.ndim == 1:
        covariates = covariates[:, None]
    if names is None:
        names = [f"c{j + 1}" for j in range(covariates.shape[1])]
    columns = [
        CovariateInfo(
            name=name,
            is_categorical=name in categorical,
            zero_fraction=float(np.mean(covariates[:, j] == 0.0)) if len(covariates) else 0.0,
        )
        for j, name in enumerate(names)
    ]
    return SpatialDataset(array_to_locations(coords), response, covariates, columns,
                          allow_duplicates=allow_duplicates)


def _parse_cell(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"non-numeric value {text!r} at row {row}, column {column}") from None
    if not math.isfinite(value):
        raise DataError(f"non-finite value {text!r} at row {row}, column {column}")
    return value


def load_csv(path, schema, require_response=True, allow_duplicates=False,
             drop_constant=True) -> SpatialDataset:
    """Load a header CSV into a SpatialDataset.

    ``schema`` maps roles to column names: keys ``easting``, ``northing`` and
    ``response`` are required; ``categorical`` may name a list of categorical
    covariate columns and ``ignore`` a list of columns to skip.  All remaining
    columns are numeric covariates.  Constant covariate columns are dropped
    with a warning (they alias the intercept).
    """
    required = ("easting", "northing", "response") if require_response else ("easting", "northing")
    for role in required:
        if role not in schema:
            raise DataError(f"schema is missing the {role!r} column")
    categorical = set(schema.get("categorical", ()))
    ignore = set(schema.get("ignore", ()))
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        has_response = "response" in schema and schema["response"] in header
        if require_response and not has_response:
            missing = schema.get("response", "<unnamed>")
            raise DataError(f"{path}: missing column {missing!r} (role response)")
        for role in ("easting", "northing"):
            if schema[role] not in header:
                raise DataError(f"{path}: missing column {schema[role]!r} (role {role})")
        special = {schema["easting"], schema["northing"]} | ignore
        if has_response:
            special.add(schema["response"])
        cov_names = [h for h in header if h not in special]
        idx = {h: i for i, h in enumerate(header)}
        coords, response, cov_rows = [], [], []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {row_no} has {len(row)} cells, expected {len(header)}")
            coords.append(
                (
                    _parse_cell(row[idx[schema["easting"]]], row_no, schema["easting"]),
                    _parse_cell(row[idx[schema["northing"]]], row_no, schema["northing"]),
                )
            )
            if has_response:
                response.append(_parse_cell(row[idx[schema["response"]]], row_no, schema["response"]))
            else:
                response.append(0.0)
            cov_rows.append([_parse_cell(row[idx[c]], row_no, c) for c in cov_names])
    if not coords:
        raise DataError(f"{path}: no data rows")
    covariates = np.array(cov_rows, dtype=float).reshape(len(coords), len(cov_names))
    keep = []
    for j, name in enumerate(cov_names):
        if drop_constant and np.ptp(covariates[:, j]) == 0.0 and len(coords) > 1:
            warnings.warn(f"dropping constant covariate column {name!r}")
        else:
            keep.append(j)
    covariates = covariates[:, keep]
    cov_names = [cov_names[j] for j in keep]
    return from_arrays(np.array(coords), response, covariates, names=cov_names,
                       categorical=categorical, allow_duplicates=allow_duplicates)
