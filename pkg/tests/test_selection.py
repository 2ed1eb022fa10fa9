import numpy as np
import pytest

from krigeforest import from_arrays
from krigeforest.design import (
    BoxCox,
    BoxCoxSquared,
    CategoryDummy,
    DesignRecipe,
    IndicatorNonzero,
    Intercept,
    Raw,
)
from krigeforest.selection import droppable_groups, prune_slm, stepwise_lm
from krigeforest.slm import FitOptions


def signal_dataset(rng, n=200, noise_cols=1, noise=0.5):
    coords = rng.uniform(0, 10, size=(n, 2))
    x = rng.uniform(0, 1, size=(n, 2 + noise_cols))
    y = 1.0 + 3.0 * x[:, 0] - 2.0 * x[:, 1] + noise * rng.standard_normal(n)
    names = ["a", "b"] + [f"noise{j}" for j in range(noise_cols)]
    return from_arrays(coords, y, x, names=names)


class TestDroppableGroups:
    def test_intercept_never_droppable(self):
        recipe = DesignRecipe([Intercept(), Raw("a")])
        assert droppable_groups(recipe) == [[1]]

    def test_indicator_boxcox_pair_atomic(self):
        recipe = DesignRecipe([
            Intercept(),
            IndicatorNonzero("a"),
            BoxCox("a", 0.5, 1.0, times_indicator=True),
            Raw("b"),
        ])
        assert droppable_groups(recipe) == [[1, 2], [3]]

    def test_boxcox_square_pair_atomic(self):
        recipe = DesignRecipe([Intercept(), BoxCox("a", 0.5, 1.0), BoxCoxSquared("a", 0.5, 1.0)])
        assert droppable_groups(recipe) == [[1, 2]]

    def test_dummy_group_per_covariate(self):
        recipe = DesignRecipe([
            Intercept(), Raw("a"), CategoryDummy("eco", 2.0), CategoryDummy("eco", 3.0),
        ])
        assert droppable_groups(recipe) == [[1], [2, 3]]


class TestStepwiseLm:
    def test_noise_column_dropped(self):
        hits = 0
        for rep in range(20):
            rng = np.random.default_rng(4000 + rep)
            ds = signal_dataset(rng)
            recipe = DesignRecipe([Intercept(), Raw("a"), Raw("b"), Raw("noise0")])
            reduced, trace = stepwise_lm(ds, recipe)
            hits += "noise0" in trace.dropped_columns()
        assert hits >= 18

    def test_all_signal_zero_drops(self, rng):
        ds = signal_dataset(rng, noise_cols=0, noise=0.1)
        recipe = DesignRecipe([Intercept(), Raw("a"), Raw("b")])
        reduced, trace = stepwise_lm(ds, recipe)
        assert reduced == recipe
        assert trace.steps[-1].action == "stop"

    def test_duplicate_column_dropped_first(self, rng):
        ds = signal_dataset(rng, noise_cols=0)
        recipe = DesignRecipe([Intercept(), Raw("a"), Raw("a"), Raw("b")])
        reduced, trace = stepwise_lm(ds, recipe)
        names = reduced.column_names()
        assert names.count("a") == 1
        assert trace.steps[0].action == "drop"

    def test_trace_monotone_and_stop_rule(self, rng):
        ds = signal_dataset(rng, noise_cols=2)
        recipe = DesignRecipe([Intercept(), Raw("a"), Raw("b"), Raw("noise0"), Raw("noise1")])
        _, trace = stepwise_lm(ds, recipe)
        for step in trace.steps:
            if step.action == "drop":
                assert step.aic_after <= step.aic_before
        last = trace.steps[-1]
        assert last.action == "stop"
        assert last.aic_after >= last.aic_before


class TestPruneSlm:
    OPTS = FitOptions(restarts=1, tolerance=1e-3, max_iter=200)

    def test_strong_signal_keeps_all(self, rng):
        ds = signal_dataset(rng, n=120, noise_cols=0, noise=0.1)
        recipe = DesignRecipe([Intercept(), Raw("a"), Raw("b")])
        model, trace = prune_slm(ds, recipe, self.OPTS)
        assert model.recipe == recipe
        assert model.method == "REML" and model.knots is None

    def test_noise_column_pruned(self):
        hits = 0
        for rep in range(10):
            rng = np.random.default_rng(5000 + rep)
            ds = signal_dataset(rng, n=150)
            recipe = DesignRecipe([Intercept(), Raw("a"), Raw("b"), Raw("noise0")])
            model, trace = prune_slm(ds, recipe, self.OPTS)
            hits += "noise0" in trace.dropped_columns()
        assert hits >= 8

    def test_final_recipe_is_subset(self, rng):
        ds = signal_dataset(rng, n=120, noise_cols=2)
        recipe = DesignRecipe([Intercept(), Raw("a"), Raw("b"), Raw("noise0"), Raw("noise1")])
        model, _ = prune_slm(ds, recipe, self.OPTS)
        assert set(model.recipe.constructors) <= set(recipe.constructors)

    def test_trace_and_diagnostics(self, rng):
        ds = signal_dataset(rng, n=100)
        recipe = DesignRecipe([Intercept(), Raw("a"), Raw("b"), Raw("noise0")])
        model, trace = prune_slm(ds, recipe, self.OPTS)
        assert trace.final_diagnostics is not None
        for step in trace.steps:
            if step.action == "drop":
                assert step.aic_after <= step.aic_before
        assert trace.steps[-1].action == "stop"

    def test_literal_mode_runs(self, rng):
        ds = signal_dataset(rng, n=100)
        recipe = DesignRecipe([Intercept(), Raw("a"), Raw("b"), Raw("noise0")])
        model, _ = prune_slm(ds, recipe, self.OPTS, literal_tstat=True)
        assert model.method == "REML"

    def test_deterministic(self, rng):
        ds = signal_dataset(rng, n=100)
        recipe = DesignRecipe([Intercept(), Raw("a"), Raw("b"), Raw("noise0")])
        m1, t1 = prune_slm(ds, recipe, self.OPTS)
        m2, t2 = prune_slm(ds, recipe, self.OPTS)
        assert m1.recipe == m2.recipe
        assert t1.steps == t2.steps
