import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from dpgpd.distributions import GammaParams, TailParams
from dpgpd.simulate import (
    BulkMixtureSpec,
    SpliceSpec,
    bulk_cdf,
    monte_carlo_quantile,
    sample_spliced,
    scenario_sec3,
    spliced_cdf,
    spliced_quantile,
)


def test_scenario_is_exact():
    s = scenario_sec3()
    assert s.bulk.weights == (0.5, 0.5)
    assert [c.shape for c in s.bulk.components] == [10.0, 6.0]
    assert [c.rate for c in s.bulk.components] == [4.0, 0.7]
    assert (s.tail.u, s.tail.sigma, s.tail.xi) == (11.0, 3.0, 0.4)


def test_shape_rate_convention_puts_threshold_at_90_percent():
    s = scenario_sec3()
    h = bulk_cdf(11.0, s.bulk)
    assert h == pytest.approx(0.5 * special.gammainc(10, 44) + 0.5 * special.gammainc(6, 7.7), abs=1e-15)
    assert h == pytest.approx(0.89, abs=0.005)
    # the shape-scale reading would put u near the median instead
    scale_reading = 0.5 * special.gammainc(10, 11 / 4) + 0.5 * special.gammainc(6, 11 / 0.7)
    assert abs(scale_reading - 0.5) < 0.01


def test_bulk_cdf_trivial_cases():
    spec = BulkMixtureSpec((1.0,), (GammaParams(3.0, 2.0),))
    assert bulk_cdf(0.0, spec) == 0.0
    assert bulk_cdf(1.7, spec) == pytest.approx(stats.gamma.cdf(1.7, 3.0, scale=0.5))


def test_spec_validation():
    with pytest.raises(ValueError):
        BulkMixtureSpec((0.5, 0.4), (GammaParams(1, 1), GammaParams(2, 1)))
    with pytest.raises(ValueError):
        BulkMixtureSpec((), ())
    with pytest.raises(ValueError):
        SpliceSpec(scenario_sec3().bulk, TailParams(0.0, 1.0, 0.1))
    with pytest.raises(ValueError):
        sample_spliced(0, scenario_sec3(), np.random.default_rng(0))


def test_spliced_cdf_continuous_at_threshold():
    s = scenario_sec3()
    left = spliced_cdf(11.0, s)
    right = spliced_cdf(np.nextafter(11.0, 12.0), s)
    assert abs(right - left) < 1e-12


@given(st.floats(0.001, 0.9999))
@settings(max_examples=50, deadline=None)
def test_spliced_quantile_inverts_cdf(p):
    s = scenario_sec3()
    assert spliced_cdf(spliced_quantile(p, s), s) == pytest.approx(p, abs=1e-10)


def test_all_draws_positive_and_split_at_threshold():
    s = scenario_sec3()
    x = sample_spliced(50_000, s, np.random.default_rng(1))
    assert np.all(x > 0)
    frac = np.mean(x > 11.0)
    p = 1.0 - s.bulk_mass
    assert abs(frac - p) < 4 * math.sqrt(p * (1 - p) / x.size)


def test_negative_shape_draws_respect_endpoint():
    s = SpliceSpec(scenario_sec3().bulk, TailParams(11.0, 3.0, -0.3))
    x = sample_spliced(20_000, s, np.random.default_rng(2))
    assert x.max() <= s.tail.upper_endpoint


def test_infinite_threshold_gives_pure_mixture():
    bulk = scenario_sec3().bulk
    s = SpliceSpec(bulk, TailParams(1e6, 1.0, 0.1))
    x = sample_spliced(20_000, s, np.random.default_rng(3))
    assert stats.kstest(x, lambda v: bulk_cdf(v, bulk)).pvalue > 0.001


def test_inverse_cdf_fallback_for_small_bulk_mass():
    bulk = BulkMixtureSpec((1.0,), (GammaParams(20.0, 1.0),))
    s = SpliceSpec(bulk, TailParams(10.0, 2.0, 0.1))
    assert s.bulk_mass < 0.1
    x = sample_spliced(20_000, s, np.random.default_rng(4))
    below = x[x <= 10.0]
    ref = lambda v: bulk_cdf(v, bulk) / s.bulk_mass
    assert stats.kstest(below, ref).pvalue > 0.001


def test_ks_spliced_sample():
    s = scenario_sec3()
    n = 100_000
    x = sample_spliced(n, s, np.random.default_rng(5))
    res = stats.kstest(x, lambda v: spliced_cdf(v, s))
    assert res.statistic < 1.63 / math.sqrt(n)
    assert res.pvalue > 0.001


def test_monte_carlo_quantile_matches_exact():
    s = scenario_sec3()
    n = 1_000_000
    q = spliced_quantile(0.95, s)
    est = monte_carlo_quantile(0.95, s, n, np.random.default_rng(6), chunk=250_000)
    # asymptotic s.e. of a sample quantile
    dens = (1 - s.bulk_mass) / s.tail.sigma * (1 + s.tail.xi * (q - 11.0) / s.tail.sigma) ** (-1 - 1 / s.tail.xi)
    se = math.sqrt(0.95 * 0.05 / n) / dens
    assert abs(est - q) < 3 * se
