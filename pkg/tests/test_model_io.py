import json

import numpy as np
import pytest

from krigeforest import from_arrays
from krigeforest.design import DesignRecipe, Intercept, Raw
from krigeforest.forest import fit_forest, qrf_quantile, rf_predict
from krigeforest.kriging import batch_predict
from krigeforest.model_io import (
    FORMAT_TAG,
    ModelFormatError,
    deserialize_model,
    serialize_model,
)
from krigeforest.rfrk import fit_rfrk, rfrk_batch_predict
from krigeforest.slm import FitOptions, NonConvergenceError, fit_slm
from krigeforest.transform import select_all

FAST = FitOptions(restarts=1, tolerance=1e-3, max_iter=200)


def fit_slm_any(ds, recipe):
    """Serialization does not care whether the optimizer converged."""
    try:
        return fit_slm(ds, recipe, FAST)[0]
    except NonConvergenceError as exc:
        return exc.model


def toy(rng, n=40):
    coords = rng.uniform(0, 10, size=(n, 2))
    x = rng.uniform(0.5, 5, size=(n, 2))
    y = 1.0 + x[:, 0] + rng.standard_normal(n)
    return from_arrays(coords, y, x, names=["a", "b"])


def sites(rng, m=5):
    return from_arrays(rng.uniform(0, 10, size=(m, 2)), np.zeros(m),
                       rng.uniform(0.5, 5, size=(m, 2)), names=["a", "b"])


class TestSlmRoundTrip:
    def test_predictions_bit_identical(self, rng, tmp_path):
        ds = toy(rng)
        model, _ = fit_slm(ds, DesignRecipe([Intercept(), Raw("a"), Raw("b")]), FAST)
        path = tmp_path / "m.json"
        serialize_model(model, path)
        back = deserialize_model(path)
        new = sites(rng)
        for a, b in zip(batch_predict(model, new), batch_predict(back, new)):
            assert a.mean == b.mean and a.variance == b.variance

    def test_transformed_recipe_round_trip(self, rng, tmp_path):
        ds = toy(rng)
        model, _ = fit_slm(ds, select_all(ds), FAST)
        path = tmp_path / "m.json"
        serialize_model(model, path)
        back = deserialize_model(path)
        assert back.recipe == model.recipe
        new = sites(rng)
        for a, b in zip(batch_predict(model, new), batch_predict(back, new)):
            assert a.mean == b.mean


class TestForestRoundTrip:
    def test_quantiles_bit_identical(self, rng, tmp_path):
        X = rng.uniform(0, 1, size=(40, 3))
        y = rng.standard_normal(40)
        model = fit_forest(X, y, n_trees=10, seed=2)
        path = tmp_path / "f.json"
        serialize_model(model, path)
        back = deserialize_model(path)
        Xn = rng.uniform(0, 1, size=(7, 3))
        np.testing.assert_array_equal(rf_predict(model, Xn), rf_predict(back, Xn))
        np.testing.assert_array_equal(
            qrf_quantile(model, Xn, [0.05, 0.5, 0.95]), qrf_quantile(back, Xn, [0.05, 0.5, 0.95])
        )


class TestRfrkRoundTrip:
    def test_predictions_bit_identical(self, rng, tmp_path):
        ds = toy(rng)
        model = fit_rfrk(ds, forest_options={"n_trees": 8}, seed=1,
                         cov_options=FitOptions(method="ML", restarts=1, tolerance=1e-3,
                                                max_iter=200))
        path = tmp_path / "r.json"
        serialize_model(model, path)
        back = deserialize_model(path)
        new = sites(rng)
        a = rfrk_batch_predict(model, new.coords, new.covariates)
        b = rfrk_batch_predict(back, new.coords, new.covariates)
        for x, y_ in zip(a, b):
            assert x.mean == y_.mean and x.variance == y_.variance


class TestFormatErrors:
    def test_truncated_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"format": "krigeforest-model", "vers')
        with pytest.raises(ModelFormatError, match="truncated|malformed"):
            deserialize_model(path)

    def test_wrong_format_tag(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"format": "something-else", "version": 1}))
        with pytest.raises(ModelFormatError, match=FORMAT_TAG):
            deserialize_model(path)

    def test_unknown_version(self, rng, tmp_path):
        ds = toy(rng)
        model = fit_slm_any(ds, DesignRecipe([Intercept()]))
        path = tmp_path / "m.json"
        serialize_model(model, path)
        doc = json.loads(path.read_text())
        doc["version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(ModelFormatError, match="version"):
            deserialize_model(path)

    def test_unknown_kind(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps({"format": FORMAT_TAG, "version": 1,
                                    "kind": "mystery", "payload": {}}))
        with pytest.raises(ModelFormatError, match="kind"):
            deserialize_model(path)

    def test_unsupported_model_type(self, tmp_path):
        with pytest.raises(TypeError):
            serialize_model(object(), tmp_path / "x.json")


class TestRandomRoundTrips:
    def test_many_random_models(self, tmp_path):
        # mixed-kind round-trips must reproduce predictions bit-for-bit
        for trial in range(12):
            rng = np.random.default_rng(500 + trial)
            ds = toy(rng, n=25)
            new = sites(rng)
            path = tmp_path / f"m{trial}.json"
            kind = trial % 3
            if kind == 0:
                model = fit_slm_any(ds, DesignRecipe([Intercept(), Raw("a")]))
                serialize_model(model, path)
                back = deserialize_model(path)
                assert [r.mean for r in batch_predict(model, new)] == \
                       [r.mean for r in batch_predict(back, new)]
            elif kind == 1:
                model = fit_forest(ds.covariates, ds.response, n_trees=5, seed=trial)
                serialize_model(model, path)
                back = deserialize_model(path)
                np.testing.assert_array_equal(rf_predict(model, new.covariates),
                                              rf_predict(back, new.covariates))
            else:
                model = fit_rfrk(ds, forest_options={"n_trees": 5}, seed=trial,
                                 cov_options=FAST)
                serialize_model(model, path)
                back = deserialize_model(path)
                a = rfrk_batch_predict(model, new.coords, new.covariates)
                b = rfrk_batch_predict(back, new.coords, new.covariates)
                assert [r.mean for r in a] == [r.mean for r in b]
