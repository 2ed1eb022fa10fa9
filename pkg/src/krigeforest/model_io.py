"""Versioned JSON serialization for fitted models (SLM, forest, RFRK).

The file is a single JSON document with an explicit format/version tag:
``{"format": "krigeforest-model", "version": 1, "kind": ..., "payload": ...}``.
Floats are written with full repr precision, so a round-trip reproduces
predictions bit-identically.
"""
from __future__ import annotations

import dataclasses
import json

import numpy as np

from .covariance import CovarianceParams, KnotSet
from .data import array_to_locations
from .design import (
    BoxCox,
    BoxCoxSquared,
    CategoryDummy,
    DesignRecipe,
    IndicatorNonzero,
    Intercept,
    Raw,
)
from .forest import ForestModel, RegressionTree
from .rfrk import RFRKModel
from .slm import FittedSLM

__all__ = ["serialize_model", "deserialize_model", "ModelFormatError"]

FORMAT_TAG = "krigeforest-model"
FORMAT_VERSION = 1

_CONSTRUCTORS = {
    "intercept": Intercept,
    "raw": Raw,
    "indicator": IndicatorNonzero,
    "boxcox": BoxCox,
    "boxcox2": BoxCoxSquared,
    "dummy": CategoryDummy,
}
_CONSTRUCTOR_TAGS = {cls: tag for tag, cls in _CONSTRUCTORS.items()}


class ModelFormatError(ValueError):
    """Raised for unreadable, truncated or wrong-version model files."""


def _arr(a):
    return np.asarray(a).tolist()


def _recipe_to_json(recipe: DesignRecipe):
    out = []
    for c in recipe:
        entry = {"type": _CONSTRUCTOR_TAGS[type(c)]}
        entry.update(dataclasses.asdict(c))
        out.append(entry)
    return out


def _recipe_from_json(items):
    constructors = []
    for entry in items:
        entry = dict(entry)
        cls = _CONSTRUCTORS[entry.pop("type")]
        constructors.append(cls(**entry))
    return DesignRecipe(constructors)


def _slm_to_json(model: FittedSLM):
    return {
        "recipe": _recipe_to_json(model.recipe),
        "beta": _arr(model.beta),
        "beta_cov": _arr(model.beta_cov),
        "cov_params": dataclasses.asdict(model.cov_params),
        "method": model.method,
        "knots": None if model.knots is None else _arr(model.knots.coords),
        "training_coords": _arr(model.training_coords),
        "training_design": _arr(model.training_design),
        "training_response": _arr(model.training_response),
        "column_names": list(model.column_names),
        "converged": model.converged,
    }


def _slm_from_json(payload) -> FittedSLM:
    knots = payload["knots"]
    k = len(payload["beta"])
    n = len(payload["training_coords"])
    return FittedSLM(
        recipe=_recipe_from_json(payload["recipe"]),
        beta=np.asarray(payload["beta"], dtype=float),
        beta_cov=np.asarray(payload["beta_cov"], dtype=float).reshape(k, k),
        cov_params=CovarianceParams(**payload["cov_params"]),
        method=payload["method"],
        knots=None if knots is None else KnotSet(array_to_locations(np.asarray(knots))),
        training_coords=np.asarray(payload["training_coords"], dtype=float),
        training_design=np.asarray(payload["training_design"], dtype=float).reshape(n, k),
        training_response=np.asarray(payload["training_response"], dtype=float),
        column_names=tuple(payload["column_names"]),
        converged=payload["converged"],
    )


def _tree_to_json(tree: RegressionTree):
    return {
        "feature": tree.feature,
        "threshold": tree.threshold,
        "left": tree.left,
        "right": tree.right,
        "leaf_value": tree.leaf_value,
        "leaf_rows": [None if r is None else _arr(r) for r in tree.leaf_rows],
        "left_levels": [None if l is None else _arr(l) for l in tree.left_levels],
        "node_levels": [None if l is None else _arr(l) for l in tree.node_levels],
        "left_count": tree.left_count,
        "right_count": tree.right_count,
    }


def _tree_from_json(payload) -> RegressionTree:
    tree = RegressionTree()
    tree.feature = [int(v) for v in payload["feature"]]
    tree.threshold = [float(v) for v in payload["threshold"]]
    tree.left = [int(v) for v in payload["left"]]
    tree.right = [int(v) for v in payload["right"]]
    tree.leaf_value = [float(v) for v in payload["leaf_value"]]
    tree.leaf_rows = [None if r is None else np.asarray(r, dtype=np.int64)
                      for r in payload["leaf_rows"]]
    tree.left_levels = [None if l is None else np.asarray(l, dtype=float)
                        for l in payload["left_levels"]]
    tree.node_levels = [None if l is None else np.asarray(l, dtype=float)
                        for l in payload["node_levels"]]
    tree.left_count = [int(v) for v in payload["left_count"]]
    tree.right_count = [int(v) for v in payload["right_count"]]
    return tree


def _forest_to_json(model: ForestModel):
    return {
        "m": model.m,
        "min_node_size": model.min_node_size,
        "seed": model.seed,
        "n_train": model.n_train,
        "train_y": _arr(model.train_y),
        "categorical": list(model.categorical),
        "bootstrap": model.bootstrap,
        "oob_indices": [_arr(o) for o in model.oob_indices],
        "trees": [_tree_to_json(t) for t in model.trees],
    }


def _forest_from_json(payload) -> ForestModel:
    return ForestModel(
        trees=[_tree_from_json(t) for t in payload["trees"]],
        m=int(payload["m"]),
        min_node_size=int(payload["min_node_size"]),
        seed=int(payload["seed"]),
        n_train=int(payload["n_train"]),
        train_y=np.asarray(payload["train_y"], dtype=float),
        categorical=tuple(payload["categorical"]),
        bootstrap=payload["bootstrap"],
        oob_indices=[np.asarray(o, dtype=np.int64) for o in payload["oob_indices"]],
    )


def _rfrk_to_json(model: RFRKModel):
    return {
        "forest": _forest_to_json(model.forest),
        "residual_cov": dataclasses.asdict(model.residual_cov),
        "training_coords": _arr(model.training_coords),
        "residuals": _arr(model.residuals),
        "converged": model.converged,
        "oob_residuals": model.oob_residuals,
    }


def _rfrk_from_json(payload) -> RFRKModel:
    return RFRKModel(
        forest=_forest_from_json(payload["forest"]),
        residual_cov=CovarianceParams(**payload["residual_cov"]),
        training_coords=np.asarray(payload["training_coords"], dtype=float),
        residuals=np.asarray(payload["residuals"], dtype=float),
        converged=payload["converged"],
        oob_residuals=payload["oob_residuals"],
    )


def serialize_model(model, path):
    """Write a fitted SLM, forest or RFRK model to a versioned JSON file."""
    if isinstance(model, FittedSLM):
        kind, payload = "slm", _slm_to_json(model)
    elif isinstance(model, ForestModel):
        kind, payload = "forest", _forest_to_json(model)
    elif isinstance(model, RFRKModel):
        kind, payload = "rfrk", _rfrk_to_json(model)
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    doc = {"format": FORMAT_TAG, "version": FORMAT_VERSION, "kind": kind, "payload": payload}
    with open(path, "w") as fh:
        json.dump(doc, fh)


def deserialize_model(path):
    """Read a model file back; rejects unknown formats and schema versions."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: truncated or malformed model file ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_TAG:
        raise ModelFormatError(f"{path}: not a {FORMAT_TAG} file")
    if doc.get("version") != FORMAT_VERSION:
        raise ModelFormatError(
            f"{path}: schema version {doc.get('version')!r} is not supported "
            f"(expected {FORMAT_VERSION})")
    kind = doc.get("kind")
    loaders = {"slm": _slm_from_json, "forest": _forest_from_json, "rfrk": _rfrk_from_json}
    if kind not in loaders:
        raise ModelFormatError(f"{path}: unknown model kind {kind!r}")
    return loaders[kind](doc["payload"])
