import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from nelsontunnel import stats
from nelsontunnel.errors import FitError
from nelsontunnel.field import BarrierSpec

ALPHA, BETA = 11.3, 0.79


@pytest.fixture(scope="module")
def gamma_samples():
    return np.random.default_rng(2024).gamma(ALPHA + 1.0, BETA, 1_000_000)


def test_histogram_small_example():
    h = stats.build_histogram([1.0, 1.0, 3.0], bins=2)
    assert h.counts.tolist() == [2, 1]
    assert h.edges[0] == 0.0 and h.edges[-1] == pytest.approx(3.0)
    assert h.counts.sum() == h.n_transmitted == 3


def test_histogram_default_bins_and_normalization():
    t = np.random.default_rng(0).gamma(3.0, 1.0, 10_000)
    h = stats.build_histogram(t)
    assert len(h.counts) == 100
    assert np.sum(h.density()) * h.bin_width == pytest.approx(1.0)
    assert stats.build_histogram(t[:50]).counts.size == 20


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1e-6, 1e6), min_size=1, max_size=200), st.integers(1, 60))
def test_histogram_partitions_sample(times, bins):
    h = stats.build_histogram(times, bins)
    assert h.counts.sum() == len(times)


def test_histogram_errors():
    with pytest.raises(ValueError, match="no transmitted paths"):
        stats.build_histogram([])
    with pytest.raises(ValueError):
        stats.build_histogram([1.0, -2.0])


def test_moments_examples():
    assert stats.moments([2, 2, 2]) == (2.0, 0.0)
    m, s = stats.moments([0, 2])
    assert m == 1.0 and s == pytest.approx(math.sqrt(2))
    with pytest.raises(ValueError):
        stats.moments([1.0])


def test_gamma_pdf_limits_and_mode():
    tau = np.linspace(0.1, 5, 50)
    assert np.allclose(stats.gamma_pdf(1e-12, 2.0, tau), np.exp(-tau / 2.0) / 2.0, rtol=1e-9)
    grid = np.linspace(0.01, 30, 300_001)
    mode = grid[np.argmax(stats.gamma_pdf(ALPHA, BETA, grid))]
    assert mode == pytest.approx(ALPHA * BETA, abs=1e-4)
    val, _ = quad(lambda t: stats.gamma_pdf(ALPHA, BETA, t), 0, 50 * BETA, limit=200)
    assert val == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ValueError):
        stats.gamma_pdf(-1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        stats.gamma_pdf(1.0, 0.0, 1.0)


def test_gamma_moments_examples(gamma_samples):
    mean, dev = stats.gamma_moments(ALPHA, BETA)
    assert mean == pytest.approx(9.717, abs=5e-4)
    assert dev == pytest.approx(2.771, abs=5e-4)
    m0, d0 = stats.gamma_moments(1e-15, 3.0)
    assert m0 == pytest.approx(3.0) and d0 == pytest.approx(3.0)
    assert gamma_samples.mean() == pytest.approx(mean, rel=0.01)
    assert gamma_samples.std(ddof=1) == pytest.approx(dev, rel=0.01)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_moment_identity(alpha, beta):
    mean, dev = stats.gamma_moments(alpha, beta)
    assert dev ** 2 * (alpha + 1) == pytest.approx(mean ** 2, rel=1e-12)
    a2, b2 = stats.moment_parameters(mean, dev)
    assert a2 == pytest.approx(alpha, rel=1e-9, abs=1e-9) and b2 == pytest.approx(beta, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 50), st.lists(st.floats(0.01, 100), min_size=2, max_size=10))
def test_constant_shape_and_constant_scale_families(alpha, betas):
    ratios = [stats.gamma_moments(alpha, b)[1] / stats.gamma_moments(alpha, b)[0] for b in betas]
    assert np.allclose(ratios, ratios[0], rtol=1e-12)
    beta = betas[0]
    r2 = [stats.gamma_moments(a, beta)[1] ** 2 / stats.gamma_moments(a, beta)[0] for a in betas]
    assert np.allclose(r2, beta, rtol=1e-12)


def test_least_squares_recovers_parameters(gamma_samples):
    fit = stats.fit_gamma_least_squares(stats.build_histogram(gamma_samples))
    assert abs(fit.alpha - ALPHA) < 0.5 and abs(fit.beta - BETA) < 0.05
    assert fit.method == "least_squares" and not fit.degenerate
    assert fit.deviation ** 2 * (fit.alpha + 1) == pytest.approx(fit.mean ** 2)
    wfit = stats.fit_gamma_least_squares(stats.build_histogram(gamma_samples), weighted=True)
    assert abs(wfit.alpha - ALPHA) < 0.5 and abs(wfit.beta - BETA) < 0.05


def test_mle_recovers_parameters(gamma_samples):
    fit = stats.fit_gamma_mle(gamma_samples)
    assert abs(fit.alpha - ALPHA) < 0.3 and abs(fit.beta - BETA) < 0.03


def test_methods_agree_on_moderate_sample(gamma_samples):
    t = gamma_samples[:20_000]
    ls = stats.fit_gamma_least_squares(stats.build_histogram(t))
    ml = stats.fit_gamma_mle(t)
    assert abs(ls.alpha - ml.alpha) <= 1.5


@settings(max_examples=15, deadline=None)
@given(st.floats(0.5, 30), st.floats(0.05, 5), st.integers(0, 1000))
def test_fit_self_consistency(alpha, beta, seed):
    t = np.random.default_rng(seed).gamma(alpha + 1, beta, 100_000)
    ml = stats.fit_gamma_mle(t)
    assert ml.alpha == pytest.approx(alpha, rel=0.1, abs=0.1)
    assert ml.beta == pytest.approx(beta, rel=0.1)
    ls = stats.fit_gamma_least_squares(stats.build_histogram(t))
    assert ls.mean == pytest.approx(t.mean(), rel=0.05)


def test_degenerate_inputs():
    with pytest.raises(FitError):
        stats.fit_gamma_least_squares(stats.build_histogram([4.0] * 1000))
    with pytest.raises(FitError, match="degenerate"):
        stats.fit_gamma_mle([4.0] * 1000)
    with pytest.raises(FitError):
        stats.fit_gamma_mle([1.0, 2.0, 3.0])


def test_fit_error_carries_best_iterate():
    t = np.random.default_rng(0).gamma(5, 1, 5000)
    with pytest.raises(FitError) as info:
        stats.fit_gamma_least_squares(stats.build_histogram(t), max_iter=3)
    assert info.value.best is not None and info.value.best.alpha > 0


def test_wkb_time():
    assert stats.wkb_time(BarrierSpec(1.0, 10.0), 0.5) == pytest.approx(10.0, abs=1e-12)
    assert stats.wkb_time_classical(0.0, 1.0, 0.5) == 0.0
    for v0, e0, d, m in [(1.0, 0.5, 10.0, 1.0), (3.0, 0.7, 2.5, 2.0), (10.0, 9.0, 0.3, 0.5)]:
        a = stats.wkb_time(BarrierSpec(v0, d, m=m), e0)
        b = stats.wkb_time_classical(d, v0, e0, m)
        assert abs(a - b) < 1e-12
    with pytest.raises(ValueError):
        stats.wkb_time(BarrierSpec(1.0, 1.0), 1.0)


def test_regime_slope_examples():
    m = np.array([1.0, 2.0, 5.0, 11.0])
    assert stats.regime_slope(np.column_stack([m, 0.3 * m])) == pytest.approx(1.0, abs=1e-9)
    assert stats.regime_slope(np.column_stack([m, 0.3 * np.sqrt(m)])) == pytest.approx(0.5, abs=1e-9)
    with pytest.raises(ValueError):
        stats.regime_slope([(1, 1), (2, -1), (3, 1)])
    with pytest.raises(ValueError):
        stats.regime_slope([(1, 1), (2, 1)])


def test_skewness_sign():
    t = np.random.default_rng(1).gamma(2, 1, 50_000)
    assert stats.skewness(t) > 0
    assert stats.skewness([1, 1, 1]) == 0.0


def test_cluster_bootstrap_widens_for_duplicated_groups():
    rng = np.random.default_rng(3)
    base = rng.normal(size=200)
    dup = np.repeat(base, 10)
    groups = np.repeat(np.arange(200), 10)
    se_naive = stats.cluster_bootstrap(dup, np.arange(dup.size), np.mean, 300)
    se_group = stats.cluster_bootstrap(dup, groups, np.mean, 300)
    assert se_group[0] > 2.0 * se_naive[0]
    assert se_group[0] == pytest.approx(1 / np.sqrt(200), rel=0.3)
