import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from vortexlab.estimators import (SampleCloud, energy_distance_test, fit_exponential_rate,
                                  histogram_tv, knn_entropy, mardia_normality,
                                  relative_entropy_vs_gaussian, sliced_wasserstein,
                                  wasserstein_exact)

NU = 1.0


def _within(rep, target, rel_budget=0.05):
    return abs(rep.estimate - target) <= 3 * rep.std_error + rel_budget * abs(target)


class TestSampleCloud:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            SampleCloud(np.array([[0.0, np.nan]]))

    def test_vector_becomes_column(self):
        c = SampleCloud(np.arange(5.0))
        assert (c.n, c.d) == (5, 1)


class TestRelativeEntropy:
    def test_reference_itself(self, rng):
        x = rng.normal(scale=2.0, size=(20_000, 2))
        rep = relative_entropy_vs_gaussian(x, 0.0, 4 * NU)
        assert abs(rep.estimate) <= 3 * rep.std_error + 0.01

    def test_shifted_mean(self, rng):
        m = np.array([1.0, -0.5])
        x = m + rng.normal(scale=2.0, size=(20_000, 2))
        rep = relative_entropy_vs_gaussian(x, 0.0, 4 * NU)
        assert _within(rep, float(m @ m) / (8 * NU))

    def test_narrow_variance(self, rng):
        x = rng.normal(scale=math.sqrt(2 * NU), size=(20_000, 2))
        rep = relative_entropy_vs_gaussian(x, 0.0, 4 * NU)
        assert _within(rep, math.log(2) - 0.5)

    def test_rotation_invariance(self, rng):
        x = 0.5 + rng.normal(size=(2000, 2)) * [1.0, 2.0]
        th = 0.7
        R = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
        mean = np.array([0.3, -0.2])
        a = relative_entropy_vs_gaussian(x, mean, 2.0)
        b = relative_entropy_vs_gaussian(x @ R.T, R @ mean, 2.0)
        assert a.estimate == pytest.approx(b.estimate, abs=1e-10)

    def test_coincident_points(self, rng):
        x = rng.normal(size=(200, 2))
        x[5] = x[17]
        with pytest.raises(ValueError, match="coincident"):
            relative_entropy_vs_gaussian(x, 0.0, 1.0)

    @pytest.mark.parametrize("kw", [dict(k=2), dict(k=21), dict(cov_scale=0.0)])
    def test_preconditions(self, rng, kw):
        args = dict(mean=0.0, cov_scale=1.0) | kw
        with pytest.raises(ValueError):
            relative_entropy_vs_gaussian(rng.normal(size=(200, 2)), **args)
        with pytest.raises(ValueError):
            relative_entropy_vs_gaussian(rng.normal(size=(50, 2)), 0.0, 1.0)

    def test_knn_entropy_uniform_square(self, rng):
        # uniform on [0, 2]^2 has entropy ln 4
        h = knn_entropy(rng.uniform(0, 2, size=(20_000, 2)))
        assert h == pytest.approx(math.log(4), abs=0.02)


class TestWasserstein:
    def test_identical(self, rng):
        x = rng.normal(size=(50, 3))
        assert wasserstein_exact(x, x, 2.0) == 0.0

    @pytest.mark.parametrize("alpha", [1.0, 1.5, 3.0])
    def test_single_points(self, alpha):
        assert wasserstein_exact([[0.0, 0.0]], [[3.0, 4.0]], alpha) == pytest.approx(5.0)

    @pytest.mark.parametrize("alpha", [1.0, 2.0])
    def test_matches_brute_force(self, rng, alpha):
        x, y = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
        cost = np.linalg.norm(x[:, None] - y[None], axis=-1) ** alpha
        best = min(cost[range(5), p].mean() for p in itertools.permutations(range(5)))
        assert wasserstein_exact(x, y, alpha) == pytest.approx(best ** (1 / alpha), rel=1e-12)

    def test_size_mismatch(self, rng):
        with pytest.raises(ValueError, match="sizes differ"):
            wasserstein_exact(rng.normal(size=(4, 2)), rng.normal(size=(5, 2)))

    def test_cap(self):
        x = np.zeros((2001, 1))
        with pytest.raises(ValueError, match="capped"):
            wasserstein_exact(x, x)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 31), st.sampled_from([1.0, 2.0]))
    def test_metric_axioms(self, seed, alpha):
        g = np.random.default_rng(seed)
        x, y, z = (g.normal(size=(8, 2)) for _ in range(3))
        dxy, dyx = wasserstein_exact(x, y, alpha), wasserstein_exact(y, x, alpha)
        assert dxy == pytest.approx(dyx, abs=1e-12)
        assert dxy > 0
        assert dxy <= wasserstein_exact(x, z, alpha) + wasserstein_exact(z, y, alpha) + 1e-12
        assert wasserstein_exact(x, x[::-1], alpha) == 0.0


class TestSliced:
    def test_identical(self, rng):
        x = rng.normal(size=(100, 3))
        assert sliced_wasserstein(x, x, 2.0) == 0.0

    @pytest.mark.parametrize("alpha", [1.0, 2.0])
    def test_one_dimensional_equals_exact(self, rng, alpha):
        x, y = rng.normal(size=(300, 1)), rng.exponential(size=(300, 1))
        assert sliced_wasserstein(x, y, alpha, 16) == pytest.approx(wasserstein_exact(x, y, alpha),
                                                                     rel=1e-12)

    def test_bounded_by_exact(self, rng):
        for _ in range(5):
            x, y = rng.normal(size=(60, 3)), 0.5 + rng.normal(size=(60, 3))
            assert sliced_wasserstein(x, y, 2.0, 64, seed=3) <= wasserstein_exact(x, y, 2.0) + 1e-12

    def test_deterministic_and_monotone_in_shift(self, rng):
        x = rng.normal(size=(2000, 2))
        d = [sliced_wasserstein(x, x + [s, 0.0], 2.0, 64, seed=1) for s in (0.25, 0.5, 1.0, 2.0)]
        assert np.all(np.diff(d) > 0)
        assert sliced_wasserstein(x, x + 1, 2.0, 64, seed=1) == sliced_wasserstein(x, x + 1, 2.0, 64, seed=1)

    def test_projection_floor(self, rng):
        x = rng.normal(size=(10, 2))
        with pytest.raises(ValueError):
            sliced_wasserstein(x, x, 1.0, n_projections=8)


class TestEnergy:
    def test_two_point_statistic(self):
        rep = energy_distance_test([[0.0, 0.0]], [[3.0, 4.0]], n_permutations=10)
        assert rep.statistic == pytest.approx(10.0)

    def test_power(self, rng):
        x = rng.normal(size=(500, 2))
        y = rng.normal(size=(500, 2)) + [1.0, 0.0]
        # the permutation p-value is floored at 1 / (1 + P)
        assert energy_distance_test(x, y, 1999, seed=1).p_value < 0.001

    def test_halves_of_one_batch_rarely_reject(self):
        ok = 0
        for s in range(100):
            x = np.random.default_rng(1000 + s).normal(size=(400, 2))
            ok += energy_distance_test(x[:200], x[200:], 199, seed=s).p_value >= 0.01
        assert ok >= 98

    def test_null_p_values_uniform(self):
        ps = []
        for s in range(200):
            g = np.random.default_rng(5000 + s)
            ps.append(energy_distance_test(g.normal(size=(100, 2)), g.normal(size=(100, 2)),
                                           199, seed=s).p_value)
        assert stats.kstest(ps, "uniform").pvalue >= 0.01

    def test_deterministic_given_seed(self, rng):
        x, y = rng.normal(size=(120, 3)), rng.normal(size=(130, 3))
        a = energy_distance_test(x, y, 99, seed=7)
        b = energy_distance_test(x, y, 99, seed=7)
        assert (a.statistic, a.p_value) == (b.statistic, b.p_value)
        assert 0 < a.p_value <= 1
        assert a.std_error > 0

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError):
            energy_distance_test(rng.normal(size=(10, 2)), rng.normal(size=(10, 3)))


class TestMardia:
    def test_null_calibration(self):
        rejections = sum(
            mardia_normality(np.random.default_rng(s).normal(size=(100_000, 4))).p_value < 0.01
            for s in range(100))
        assert rejections <= 5

    def test_kurtosis_identity(self, rng):
        rep = mardia_normality(rng.normal(size=(100_000, 4)))
        assert abs(rep.extra["b2"] - 24) <= 4 * rep.extra["b2_se"]

    def test_skewness_matches_brute_force(self, rng):
        x = rng.normal(size=(300, 3)) ** 2
        xc = x - x.mean(0)
        S = xc.T @ xc / len(x)
        G = xc @ np.linalg.solve(S, xc.T)
        assert mardia_normality(x).extra["b1"] == pytest.approx(np.mean(G ** 3), rel=1e-10)
        assert mardia_normality(x).extra["b2"] == pytest.approx(np.mean(np.diag(G) ** 2), rel=1e-10)

    def test_power_exponential_marginals(self, rng):
        assert mardia_normality(rng.exponential(size=(10_000, 2))).p_value < 0.001

    def test_affine_invariance(self, rng):
        x = rng.standard_t(8, size=(5000, 3))
        A = rng.normal(size=(3, 3))
        a, b = mardia_normality(x), mardia_normality(x @ A.T + 4.0)
        assert a.extra["b1"] == pytest.approx(b.extra["b1"], rel=1e-8)
        assert a.extra["b2"] == pytest.approx(b.extra["b2"], rel=1e-8)

    def test_singular(self, rng):
        x = rng.normal(size=(1000, 1))
        with pytest.raises(ValueError, match="singular"):
            mardia_normality(np.hstack([x, 2 * x]))

    def test_dimension_cap(self, rng):
        with pytest.raises(ValueError):
            mardia_normality(rng.normal(size=(1000, 9)))


class TestExponentialFit:
    def test_exact_decay(self):
        t = np.linspace(0, 5, 11)
        rep = fit_exponential_rate(t, np.exp(-t))
        assert rep.estimate == pytest.approx(1.0, abs=1e-13)
        assert rep.std_error == pytest.approx(0.0, abs=1e-12)

    def test_constant(self):
        rep = fit_exponential_rate([0, 1, 2, 3], [2.0] * 4)
        assert rep.estimate == 0.0 and rep.p_value == 1.0

    def test_noisy_decay(self, rng):
        t = np.linspace(0, 4, 40)
        v = np.exp(-t) * (1 + 0.05 * rng.normal(size=t.size))
        rep = fit_exponential_rate(t, v)
        assert abs(rep.estimate - 1) <= 3 * rep.std_error

    @pytest.mark.parametrize("t, v", [([0, 1, 2, 3], [1, 0.5, 0.0, 0.1]),
                                      ([0, 1, 2], [1, 0.5, 0.2]),
                                      ([1, 1, 1, 1], [1, 2, 3, 4])])
    def test_domain_errors(self, t, v):
        with pytest.raises(ValueError):
            fit_exponential_rate(t, v)


def test_histogram_tv_trend(rng):
    x = rng.normal(size=(20_000, 2))
    near = histogram_tv(x, rng.normal(size=(20_000, 2)) + 0.1)
    far = histogram_tv(x, rng.normal(size=(20_000, 2)) + 1.0)
    assert 0 <= near < far <= 1
