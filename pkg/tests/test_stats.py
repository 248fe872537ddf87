import math

import numpy as np
import pytest
from scipy import integrate

from qubit_arrow.state import QubitValidationError
from qubit_arrow.stats import (
    Histogram,
    QEnsemble,
    StatisticsError,
    analytic_qnd_cdf,
    analytic_qnd_density,
    analytic_qnd_normalization,
    build_histogram,
    detailed_ft_curve,
    integral_ft,
    ks_distance,
    params_fingerprint,
    sample_analytic_qnd,
    validate_symmetry,
)

TAU = 1.0


def ft_gaussian(rng, mu, n):
    """Gaussian Q with variance 2μ satisfies P(Q)/P(-Q) = e^Q exactly."""
    return rng.normal(mu, math.sqrt(2 * mu), size=n)


class TestQEnsemble:
    def test_rejects_non_finite(self):
        with pytest.raises(StatisticsError):
            QEnsemble(np.array([0.1, np.inf]))

    def test_empty(self):
        with pytest.raises(StatisticsError):
            QEnsemble(np.array([])).require_nonempty()


class TestHistogram:
    def test_bins_centred_on_multiples_of_width(self):
        hist = build_histogram(QEnsemble(np.array([0.0, 0.12, 0.13, -0.13, 0.5])), 0.25, 1.0)
        assert hist.half_bins == 4
        assert np.allclose(hist.centers, 0.25 * np.arange(-4, 5))
        m = hist.half_bins
        assert hist.counts[m] == 2
        assert hist.counts[m + 1] == 1 and hist.counts[m - 1] == 1
        assert hist.counts[m + 2] == 1

    def test_edge_values_go_away_from_zero(self):
        hist = build_histogram(QEnsemble(np.array([-0.125, 0.125, 0.375])), 0.25, 1.0)
        m = hist.half_bins
        assert hist.counts[m] == 0
        assert hist.counts[m - 1] == 1 and hist.counts[m + 1] == 1
        assert hist.counts[m + 2] == 1
        assert hist.edges[m] == pytest.approx(-0.125) and hist.edges[m + 1] == pytest.approx(0.125)

    def test_mirror_symmetry(self, rng):
        q = rng.normal(0.4, 1.5, size=5000)
        a = build_histogram(QEnsemble(q), 0.25, 5.0)
        b = build_histogram(QEnsemble(-q), 0.25, 5.0)
        assert np.array_equal(a.counts, b.counts[::-1])
        assert a.underflow == b.overflow
        validate_symmetry(a)

    def test_out_of_range_samples_are_tallied(self):
        hist = build_histogram(QEnsemble(np.array([-20.0, 0.0, 20.0, 30.0])), 0.5, 2.0)
        assert (hist.underflow, hist.total, hist.overflow) == (1, 1, 2)
        assert hist.n_samples == 4
        assert hist.density().sum() * hist.bin_width == pytest.approx(0.25)

    def test_invalid_arguments(self):
        with pytest.raises(StatisticsError):
            build_histogram(QEnsemble(np.array([0.0])), 0.0, 1.0)
        with pytest.raises(StatisticsError):
            build_histogram(QEnsemble(np.array([])), 0.25, 1.0)

    def test_asymmetric_histogram_rejected(self):
        hist = Histogram(edges=np.array([-0.5, 0.5, 1.5]), counts=np.array([1, 1]), total=2)
        with pytest.raises(StatisticsError):
            validate_symmetry(hist)


class TestDetailedFt:
    def test_slope_of_ft_satisfying_ensemble(self, rng):
        hist = build_histogram(QEnsemble(ft_gaussian(rng, 1.0, 200_000)), 0.25, 10.0)
        curve = detailed_ft_curve(hist, min_count=10, window=3.0)
        assert curve.slope == pytest.approx(1.0, abs=0.1)
        assert curve.n_fit_points >= 2
        assert np.all(curve.q > 0)

    def test_one_sided_ensemble_has_no_curve(self, rng):
        hist = build_histogram(QEnsemble(rng.uniform(0.2, 4.0, size=1000)), 0.25, 10.0)
        with pytest.raises(StatisticsError, match="minimum count"):
            detailed_ft_curve(hist)

    def test_single_pair_gives_nan_slope(self):
        hist = Histogram(edges=0.25 * (np.arange(-1, 3) - 0.5), counts=np.array([20, 5, 40]), total=65)
        curve = detailed_ft_curve(hist, min_count=10)
        assert curve.q.tolist() == [0.25]
        assert curve.ln_ratio[0] == pytest.approx(math.log(2.0))
        assert math.isnan(curve.slope)


class TestIntegralFt:
    def test_ft_ensemble_averages_to_one(self, rng):
        res = integral_ft(QEnsemble(ft_gaussian(rng, 0.5, 100_000)))
        assert abs(res.mean - 1.0) < 5 * res.stderr

    def test_jackknife_of_mean_is_standard_error(self, rng):
        q = rng.normal(0.2, 0.6, size=500)
        res = integral_ft(QEnsemble(q))
        w = np.exp(-q)
        assert res.stderr == pytest.approx(np.std(w, ddof=1) / math.sqrt(q.size), rel=1e-9)
        assert res.log_mean == pytest.approx(math.log(res.mean), abs=1e-12)
        assert res.median == pytest.approx(np.median(w))
        assert res.deficit == pytest.approx(1.0 - res.mean)

    def test_single_sample(self):
        res = integral_ft(QEnsemble(np.array([0.0])))
        assert res.mean == 1.0 and math.isnan(res.stderr)


class TestAnalyticQnd:
    @pytest.mark.parametrize("ratio", [0.25, 0.5, 1.0, 2.0, 4.0])
    def test_normalised(self, ratio):
        assert analytic_qnd_normalization(ratio * TAU, TAU) == pytest.approx(1.0, abs=1e-6)

    def test_zero_for_non_positive_q(self):
        assert analytic_qnd_density(0.0, 1.0, TAU) == 0.0
        assert analytic_qnd_density(-1.0, 1.0, TAU) == 0.0
        assert analytic_qnd_cdf(-0.5, 1.0, TAU) == 0.0
        assert isinstance(analytic_qnd_density(1.0, 1.0, TAU), float)

    def test_cdf_matches_integrated_density(self):
        for q in (0.3, 1.0, 3.0):
            value, _ = integrate.quad(lambda v: analytic_qnd_density(v, 1.0, TAU), 0.0, q, limit=200)
            assert analytic_qnd_cdf(q, 1.0, TAU) == pytest.approx(value, abs=1e-6)

    def test_cdf_is_monotone(self):
        cdf = analytic_qnd_cdf(np.linspace(0.0, 40.0, 400), 2.0, TAU)
        assert np.all(np.diff(cdf) >= -1e-15)
        assert cdf[-1] == pytest.approx(1.0, abs=1e-9)

    def test_sampler_follows_cdf(self):
        values = sample_analytic_qnd(0.5, TAU, 20_000, np.random.default_rng(3))
        assert np.all(values >= 0.0)
        assert ks_distance(QEnsemble(values), lambda v: analytic_qnd_cdf(v, 0.5, TAU)) < 0.02

    def test_invalid_times(self):
        with pytest.raises(QubitValidationError):
            analytic_qnd_density(1.0, 0.0, TAU)


def test_params_fingerprint_is_stable():
    a = params_fingerprint({"dt": 16e-9}, "x+")
    assert a == params_fingerprint({"dt": 16e-9}, "x+")
    assert a != params_fingerprint({"dt": 8e-9}, "x+")
    assert len(a) == 16
