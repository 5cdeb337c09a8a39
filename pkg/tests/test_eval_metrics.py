import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pdegen.eval_metrics import (LEVELS, EnsembleForecast, EvalReport, crps_ensemble,
                                 generate_ensemble, interval_coverage, relative_mse, rmsce,
                                 step_curves)


def crps_by_quadrature(members, y):
    """Integral of (F(z) - 1{z >= y})^2 dz; the integrand is constant between breakpoints."""
    pts = np.sort(np.concatenate([members, [y]]))
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        if b == a:
            continue
        z = 0.5 * (a + b)
        F = np.mean(members <= z)
        H = 1.0 if z >= y else 0.0
        total += (F - H) ** 2 * (b - a)
    return total


class TestRelativeMse:
    def test_examples(self):
        t = np.random.default_rng(0).normal(size=(4, 5))
        assert relative_mse(t, t) == 0.0
        assert relative_mse(np.zeros_like(t), t) == 1.0
        assert abs(relative_mse(2 * t, t) - 1.0) < 1e-15

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1), st.floats(-100, 100).filter(lambda c: abs(c) > 1e-3))
    def test_scale_covariant(self, seed, c):
        rng = np.random.default_rng(seed)
        p, t = rng.normal(size=10), rng.normal(size=10)
        assert math.isclose(relative_mse(c * p, c * t), relative_mse(p, t), rel_tol=1e-10)

    def test_errors(self):
        with pytest.raises(ValueError):
            relative_mse(np.ones(3), np.zeros(3))
        with pytest.raises(ValueError):
            relative_mse(np.ones(3), np.ones(4))


class TestCrps:
    def test_two_members(self):
        assert crps_ensemble(np.array([0.0, 2.0]), 1.0) == 0.5
        assert abs(crps_by_quadrature(np.array([0.0, 2.0]), 1.0) - 0.5) < 1e-15

    def test_perfect_and_degenerate(self):
        assert crps_ensemble(np.full(4, 3.0), 3.0) == 0.0
        assert crps_ensemble(np.array([1.5, 1.5]), -0.5) == 2.0

    def test_matches_quadrature(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            e = int(rng.integers(2, 7))
            x, y = rng.normal(size=e), float(rng.normal())
            assert abs(crps_ensemble(x, y) - crps_by_quadrature(x, y)) < 1e-6

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, st.integers(2, 6), elements=st.floats(-10, 10)), st.floats(-10, 10))
    def test_non_negative_and_zero_iff_exact(self, x, y):
        c = float(crps_ensemble(x, y))
        assert c >= -1e-12
        if np.all(x == y):
            assert c == 0.0
        elif np.max(np.abs(x - y)) > 1e-6:
            assert c > 0.0

    def test_pointwise_broadcast(self):
        x = np.random.default_rng(1).normal(size=(5, 3, 4))
        y = np.random.default_rng(2).normal(size=(3, 4))
        out = crps_ensemble(x, y)
        assert out.shape == (3, 4)
        assert abs(out[1, 2] - crps_ensemble(x[:, 1, 2], y[1, 2])) < 1e-15

    def test_fair_variant(self):
        x = np.array([0.0, 2.0])
        # skill 1, spread sum 4 -> 1 - 4 / (2 * 2 * 1)
        assert crps_ensemble(x, 1.0, fair=True) == 0.0

    def test_single_member(self):
        with pytest.raises(ValueError):
            crps_ensemble(np.array([1.0]), 0.0)


class TestRmsce:
    def test_identical_members_miss(self):
        members = np.zeros((4, 50))
        y = np.ones(50)
        assert np.array_equal(interval_coverage(members, y), np.zeros(9))
        expected = math.sqrt(sum((0.1 * i) ** 2 for i in range(1, 10)) / 9)
        assert abs(rmsce(members, y) - expected) < 1e-12
        assert abs(expected - 0.5627) < 1e-4

    def test_truth_at_median(self):
        rng = np.random.default_rng(3)
        members = rng.normal(size=(5, 40))
        y = np.median(members, axis=0)
        assert np.array_equal(interval_coverage(members, y), np.ones(9))
        expected = math.sqrt(sum((1 - 0.1 * i) ** 2 for i in range(1, 10)) / 9)
        assert abs(rmsce(members, y) - expected) < 1e-12

    def test_calibrated_gaussian(self):
        rng = np.random.default_rng(4)
        E, N = 200, 20_000
        members = rng.normal(size=(E, N))
        y = rng.normal(size=N)
        r = rmsce(members, y)
        sigma = math.sqrt(0.25 / N)
        # sampling noise plus the O(1/E) shrinkage of empirical-quantile intervals
        assert r < 3 * sigma + 2.0 / E

    def test_bounds(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            m = rng.normal(size=(3, 7)) * rng.uniform(0.1, 3)
            assert 0 <= rmsce(m, rng.normal(size=7)) <= 1

    def test_levels(self):
        assert LEVELS == (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)

    def test_errors(self):
        with pytest.raises(ValueError):
            rmsce(np.zeros((1, 3)), np.zeros(3))
        with pytest.raises(ValueError):
            rmsce(np.zeros((2, 0)), np.zeros(0))


class TestEnsembles:
    def sample(self, seed):
        return np.random.default_rng(seed).normal(size=(3, 4))

    def test_members_and_seeds(self):
        ens = generate_ensemble(self.sample, np.zeros((3, 4)), 5, base_seed=10)
        assert ens.members.shape == (5, 3, 4)
        assert ens.seeds == [10, 11, 12, 13, 14]
        assert not np.array_equal(ens.members[0], ens.members[1])
        again = generate_ensemble(self.sample, np.zeros((3, 4)), 5, base_seed=10)
        assert np.array_equal(ens.members, again.members)

    def test_shape_check(self):
        with pytest.raises(ValueError):
            EnsembleForecast(np.zeros((2, 3, 4)), np.zeros((3, 5)), [0, 1])

    def test_step_curves(self):
        ens = generate_ensemble(self.sample, np.ones((3, 4)), 4, 0)
        curves = step_curves(ens)
        assert curves["crps"].shape == (3,) and curves["rmsce"].shape == (3,)
        assert abs(curves["crps"][2] - crps_ensemble(ens.members[:, 2], ens.truth[2]).mean()) < 1e-15


class TestReport:
    def test_aggregate_and_files(self, tmp_path):
        rep = EvalReport(meta={"system": "Advection", "setting": "temporal"})
        vals = [0.1, 0.25, 0.4]
        for v in vals:
            rep.add(v, {"crps": np.array([0.1, 0.2]), "rmsce": np.array([0.3, 0.4])})
        assert abs(rep.mean_rel_mse - np.mean(vals)) < 1e-12
        metrics, summary = rep.write(tmp_path)
        rows = list(csv.reader(open(metrics)))
        assert rows[0] == ["trajectory", "step", "metric", "value"]
        assert len(rows) == 1 + 3 + 3 * 4
        summ = dict(csv.reader(open(summary)))
        assert summ["system"] == "Advection" and summ["n_trajectories"] == "3"
        assert abs(float(summ["mean_rel_mse"]) - 0.25) < 1e-12

    def test_empty_mean(self):
        assert math.isnan(EvalReport().mean_rel_mse)
