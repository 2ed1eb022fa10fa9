import numpy as np
import pytest

from krigeforest import from_arrays
from krigeforest.design import BoxCox, BoxCoxSquared, IndicatorNonzero, Intercept, build_design
from krigeforest.transform import (
    LAMBDA1_GRID,
    constructors_for_spec,
    fit_candidate_lm,
    select_all,
    select_transform,
)


def dataset(x, y, name="c1"):
    x = np.asarray(x, dtype=float)
    n = len(x)
    rng = np.random.default_rng(0)
    coords = rng.uniform(0, 100, size=(n, 2))
    return from_arrays(coords, y, x[:, None], names=[name])


class TestFitCandidateLm:
    def test_perfect_fit_stays_finite(self, rng):
        x = rng.uniform(1, 5, 50)
        y = 2.0 + 3.0 * x
        aic = fit_candidate_lm(y, x[:, None])
        assert np.isfinite(aic)

    def test_nested_tie_prefers_fewer_parameters(self, rng):
        x = rng.uniform(1, 5, 60)
        y = 1.0 + x + 0.1 * rng.standard_normal(60)
        zero_col = np.zeros(60)  # adds a parameter, cannot reduce RSS
        small = fit_candidate_lm(y, x[:, None])
        big = fit_candidate_lm(y, np.column_stack([x, x + zero_col]))
        assert big is None or small < big  # duplicate column is rank deficient

    def test_rank_deficient_returns_none(self, rng):
        x = rng.uniform(1, 5, 30)
        assert fit_candidate_lm(x, np.column_stack([x, x])) is None

    def test_log_shape_recovered(self):
        hits = 0
        for rep in range(20):
            rng = np.random.default_rng(1000 + rep)
            x = rng.uniform(0.0, 50.0, 50)
            y = np.log(x + 1.0) + 0.1 * rng.standard_normal(50)
            best = None
            for l1 in LAMBDA1_GRID:
                col = ((x + 1) ** l1 - 1) / l1 if l1 else np.log(x + 1)
                aic = fit_candidate_lm(y, col[:, None])
                if best is None or aic < best[0]:
                    best = (aic, l1)
            hits += best[1] == 0.0
        assert hits >= 18


class TestSelectTransform:
    def test_zero_inflated_uses_indicator_families(self, rng):
        x = np.where(rng.uniform(size=100) < 0.4, 0.0, rng.uniform(1, 10, 100))
        y = (x != 0) * 2.0 + 0.2 * rng.standard_normal(100)
        spec = select_transform(dataset(x, y), "c1")
        assert spec.zero_inflated
        assert spec.family in ("indicator", "indicator-boxcox", "indicator-plus-boxcox")

    def test_no_zeros_uses_plain_families(self, rng):
        x = rng.uniform(1, 10, 80)
        y = x + 0.1 * rng.standard_normal(80)
        spec = select_transform(dataset(x, y), "c1")
        assert not spec.zero_inflated
        assert spec.family in ("boxcox-linear", "boxcox-quadratic")

    def test_log_relationship_selects_zero_lambda(self):
        hits = 0
        for rep in range(20):
            rng = np.random.default_rng(2000 + rep)
            x = rng.uniform(0.5, 200.0, 150)
            y = np.log(x) + 0.1 * rng.standard_normal(150)
            spec = select_transform(dataset(x, y), "c1")
            hits += spec.lambda1 == 0.0
        assert hits >= 18

    def test_quadratic_in_log_selects_quadratic_family(self):
        hits = 0
        for rep in range(20):
            rng = np.random.default_rng(3000 + rep)
            x = rng.uniform(0.5, 80.0, 80)
            y = (np.log(x) - 2.0) ** 2 + 0.2 * rng.standard_normal(80)
            spec = select_transform(dataset(x, y), "c1")
            hits += spec.family == "boxcox-quadratic"
        assert hits >= 18

    def test_constant_covariate_rejected(self):
        with pytest.raises(ValueError, match="constant"):
            select_transform(dataset(np.ones(10), np.zeros(10)), "c1")

    def test_deterministic(self, rng):
        x = rng.uniform(1, 10, 50)
        y = np.sqrt(x) + 0.1 * rng.standard_normal(50)
        ds = dataset(x, y)
        assert select_transform(ds, "c1") == select_transform(ds, "c1")

    def test_negative_values_get_valid_shift(self, rng):
        x = rng.uniform(-5, 5, 60)
        y = x + 0.1 * rng.standard_normal(60)
        spec = select_transform(dataset(x, y), "c1")
        assert float(x.min()) + spec.lambda2 > 0


class TestSelectAll:
    def test_recipe_width_counts(self, rng):
        n = 120
        x1 = np.where(rng.uniform(size=n) < 0.4, 0.0, rng.uniform(1, 10, n))
        x2 = rng.uniform(1, 10, n)
        y = (x1 != 0) * 2 + np.log(x1 + 1) + x2 + 0.2 * rng.standard_normal(n)
        coords = rng.uniform(0, 100, size=(n, 2))
        ds = from_arrays(coords, y, np.column_stack([x1, x2]), names=["a", "b"])
        recipe = select_all(ds)
        assert isinstance(recipe.constructors[0], Intercept)
        X = build_design(recipe, ds)
        assert X.shape == (n, recipe.width)
        assert 3 <= recipe.width <= 5  # intercept + 1..2 per covariate

    def test_idempotent(self, rng):
        n = 60
        x = rng.uniform(1, 10, size=(n, 2))
        y = x[:, 0] + 0.1 * rng.standard_normal(n)
        ds = from_arrays(rng.uniform(0, 10, size=(n, 2)), y, x, names=["a", "b"])
        assert select_all(ds) == select_all(ds)

    def test_collects_specs_and_dummies(self, rng):
        n = 90
        x = rng.uniform(1, 10, n)
        eco = rng.integers(1, 4, n).astype(float)
        y = x + eco + 0.1 * rng.standard_normal(n)
        ds = from_arrays(rng.uniform(0, 10, size=(n, 2)), y,
                         np.column_stack([x, eco]), names=["a", "eco"],
                         categorical={"eco"})
        specs = []
        recipe = select_all(ds, specs=specs)
        assert len(specs) == 1 and specs[0].covariate == "a"
        dummy_count = sum(1 for c in recipe if type(c).__name__ == "CategoryDummy")
        assert dummy_count == 2  # 3 levels minus the reference


class TestConstructorsForSpec:
    def test_families_map_to_constructors(self):
        from krigeforest.transform import TransformSpec

        cases = {
            "indicator": [IndicatorNonzero],
            "indicator-boxcox": [BoxCox],
            "indicator-plus-boxcox": [IndicatorNonzero, BoxCox],
            "boxcox-linear": [BoxCox],
            "boxcox-quadratic": [BoxCox, BoxCoxSquared],
        }
        for family, types in cases.items():
            spec = TransformSpec("c1", family, 0.5, 1.0, 0.0, family.startswith("indicator"))
            cons = constructors_for_spec(spec)
            assert [type(c) for c in cons] == types
            for c in cons:
                if isinstance(c, BoxCox) and family.startswith("indicator"):
                    assert c.times_indicator
