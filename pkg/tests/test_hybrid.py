"""Routing identities, sweep monotonicity, energy accounting, and metrics."""

import math

import numpy as np
import pytest

from greenprune.hybrid import (
    HybridConfig,
    PredictionCache,
    aggregate_sigma,
    cache_predictions,
    default_tau_grid,
    hybrid_predict,
    pearson,
    per_sample_rmse,
    result_from_cache,
    rmse,
    rmse_by_stratum,
    route,
    sweep_from_cache,
    threshold_sweep,
)
from greenprune.nn.model import GaussianPrediction
from greenprune.synthdata import Dataset

from helpers import tiny_model


def make_cache(n=40, seed=0):
    rng = np.random.default_rng(seed)
    return PredictionCache(
        ids=[f"s{i:03d}" for i in range(n)],
        strata=np.array(["easy", "hard"] * (n // 2)),
        targets=rng.random((n, 3)) * 100,
        mu_pruned=rng.random((n, 3)) * 100,
        sigma_agg=rng.random(n) * 10,
        mu_unpruned=rng.random((n, 3)) * 100,
    )


class TestAggregateAndRoute:
    def test_aggregate_examples(self):
        assert aggregate_sigma(GaussianPrediction(np.zeros(3), np.array([1.0, 1.0, 1.0]))) == 3.0
        got = aggregate_sigma(GaussianPrediction(np.zeros(3), np.array([0.01, 0.02, 0.003])))
        assert got == pytest.approx(0.033)
        assert aggregate_sigma(GaussianPrediction(np.zeros(1), np.array([0.7]))) == pytest.approx(0.7)

    def test_route_examples(self):
        assert route(0.04, 0.035) == "reinfer"
        assert route(0.03, 0.035) == "keep"
        assert route(0.035, 0.035) == "keep"  # strict inequality at the boundary

    def test_config_validation(self):
        HybridConfig(0.0)
        HybridConfig(math.inf)
        with pytest.raises(ValueError):
            HybridConfig(-0.1)
        with pytest.raises(ValueError):
            HybridConfig(float("nan"))


class TestMetrics:
    def test_rmse_values(self):
        t = np.zeros((2, 1))
        assert rmse(t, t) == 0.0
        assert rmse(t + 5.0, t) == 5.0
        assert rmse(np.array([[3.0], [4.0]]), t) == pytest.approx(3.5355, abs=1e-4)

    def test_rmse_length_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            rmse(np.zeros((2, 1)), np.zeros((3, 1)))

    def test_rmse_by_stratum(self):
        preds = np.array([[1.0], [0.0], [3.0], [0.0]])
        targets = np.zeros((4, 1))
        strata = np.array(["easy", "easy", "hard", "hard"])
        got = rmse_by_stratum(preds, targets, strata)
        assert got["easy"] == pytest.approx(np.sqrt(0.5))
        assert got["hard"] == pytest.approx(np.sqrt(4.5))

    def test_pearson_linear(self):
        xs = np.arange(10.0)
        assert pearson(xs, 2 * xs + 1) == pytest.approx(1.0)
        assert pearson(xs, -xs) == pytest.approx(-1.0)

    def test_pearson_zero_variance_rejected(self):
        with pytest.raises(ValueError, match="variance"):
            pearson(np.ones(5), np.arange(5.0))

    def test_pearson_needs_two_points(self):
        with pytest.raises(ValueError):
            pearson(np.array([1.0]), np.array([2.0]))


class TestRoutingIdentities:
    def test_tau_inf_is_pruned_only(self):
        cache = make_cache()
        res = result_from_cache(cache, math.inf, 2.0, 10.0)
        assert res.reinferred_count == 0
        assert res.total_energy == len(cache) * 2.0
        assert res.rmse_overall == rmse(cache.mu_pruned, cache.targets)
        assert all(s.source == "pruned" for s in res.per_sample)

    def test_tau_zero_reinfers_everything(self):
        cache = make_cache()
        res = result_from_cache(cache, 0.0, 2.0, 10.0)
        assert res.reinferred_count == len(cache)
        assert res.total_energy == len(cache) * (2.0 + 10.0)
        assert res.rmse_overall == rmse(cache.mu_unpruned, cache.targets)

    def test_energy_accounting_identity(self):
        cache = make_cache()
        for tau in (1.0, 5.0, 9.0):
            res = result_from_cache(cache, tau, 3.0, 7.0)
            assert res.total_energy == len(cache) * 3.0 + res.reinferred_count * 7.0
            assert res.reinferred_count == int((cache.sigma_agg > tau).sum())

    def test_reinfer_set_nested_in_tau(self):
        cache = make_cache()
        set1 = {s.sample_id for s in result_from_cache(cache, 2.0, 1, 1).per_sample if s.source == "unpruned"}
        set2 = {s.sample_id for s in result_from_cache(cache, 6.0, 1, 1).per_sample if s.source == "unpruned"}
        assert set2 <= set1


class TestSweep:
    def test_single_inf_row(self):
        cache = make_cache()
        res = sweep_from_cache(cache, [math.inf], 2.0, 10.0)
        assert len(res.rows) == 1
        assert res.rows[0].reinferred_count == 0

    def test_counts_and_energy_non_increasing(self):
        cache = make_cache()
        taus = default_tau_grid(cache.sigma_agg)
        res = sweep_from_cache(cache, taus, 2.0, 10.0)
        counts = [r.reinferred_count for r in res.rows]
        energies = [r.total_energy for r in res.rows]
        assert counts == sorted(counts, reverse=True)
        assert energies == sorted(energies, reverse=True)

    def test_rows_match_independent_hybrid_calls(self):
        cache = make_cache()
        taus = [0.0, 3.0, 7.0, math.inf]
        res = sweep_from_cache(cache, taus, 2.0, 10.0)
        for row in res.rows:
            single = result_from_cache(cache, row.tau, 2.0, 10.0)
            assert row.reinferred_count == single.reinferred_count
            assert row.total_energy == single.total_energy
            assert row.rmse == single.rmse_overall
            assert row.rmse_by_stratum == single.rmse_by_stratum

    def test_energy_saving_at_inf(self):
        cache = make_cache()
        res = sweep_from_cache(cache, [math.inf], 2.0, 10.0)
        assert res.rows[0].energy_saving_vs_unpruned == pytest.approx(1 - 2.0 / 10.0)

    def test_unsorted_taus_rejected(self):
        with pytest.raises(ValueError, match="sorted"):
            sweep_from_cache(make_cache(), [5.0, 1.0], 1, 1)

    def test_empty_taus_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            sweep_from_cache(make_cache(), [], 1, 1)

    def test_default_grid_brackets_population(self):
        sig = np.linspace(1, 9, 50)
        grid = default_tau_grid(sig)
        assert grid[0] == 0.0 and grid[-1] == math.inf
        assert all(grid[i] < grid[i + 1] for i in range(len(grid) - 1))


class TestWithModels:
    def _dataset(self, n=12):
        rng = np.random.default_rng(3)
        images = rng.random((n, 3, 8, 8))
        targets = rng.random((n, 3)) * 100
        strata = np.array(["easy"] * (n // 2) + ["hard"] * (n - n // 2))
        return Dataset(images, targets, strata, [f"d{i}" for i in range(n)])

    def test_hybrid_predict_end_to_end(self):
        ds = self._dataset()
        pruned, unpruned = tiny_model(seed=1), tiny_model(seed=2)
        cache = cache_predictions(pruned, unpruned, ds)
        mid = float(np.median(cache.sigma_agg))
        res = hybrid_predict(pruned, unpruned, ds, mid, 1.0, 4.0)
        assert 0 < res.reinferred_count < len(ds)
        assert res.total_energy == len(ds) * 1.0 + res.reinferred_count * 4.0
        assert set(res.rmse_by_stratum) == {"easy", "hard"}

    def test_sweep_equals_hybrid_with_models(self):
        ds = self._dataset()
        pruned, unpruned = tiny_model(seed=1), tiny_model(seed=2)
        cache = cache_predictions(pruned, unpruned, ds)
        taus = default_tau_grid(cache.sigma_agg, quantiles=[0.25, 0.5, 0.75])
        swept = threshold_sweep(pruned, unpruned, ds, taus, 1.0, 4.0)
        for row in swept.rows:
            single = hybrid_predict(pruned, unpruned, ds, row.tau, 1.0, 4.0)
            assert row.rmse == single.rmse_overall
            assert row.reinferred_count == single.reinferred_count

    def test_category_mismatch_rejected(self):
        ds = self._dataset()
        with pytest.raises(ValueError, match="category"):
            cache_predictions(tiny_model(seed=1), tiny_model(seed=2, category_count=4), ds)

    def test_per_sample_rmse_shape(self):
        preds = np.zeros((5, 3))
        targets = np.ones((5, 3)) * 2
        np.testing.assert_allclose(per_sample_rmse(preds, targets), np.full(5, 2.0))
