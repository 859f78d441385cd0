import math

import mpmath
import numpy as np
import pytest
import scipy.special
import scipy.stats

from corrmat.stats import (kolmogorov_q, ks_test, moments, normal_cdf, normal_ppf, qq_points,
                           quantiles)

mpmath.mp.dps = 50


def mp_phi(x):
    return float(mpmath.ncdf(mpmath.mpf(x)))


def test_cdf_at_zero():
    assert normal_cdf(0.0) == 0.5


def test_cdf_975():
    assert abs(normal_cdf(1.959963985) - 0.975) <= 1e-9
    assert abs(normal_cdf(1.959963985) - mp_phi("1.959963985")) <= 1e-15


def test_cdf_deep_tail():
    assert abs(normal_cdf(-8.0) - 6.22e-16) <= 1e-17
    assert normal_cdf(-8.0) == pytest.approx(mp_phi(-8), rel=1e-13)


@pytest.mark.parametrize("x", np.linspace(-10, 10, 81))
def test_cdf_against_high_precision(x):
    assert abs(normal_cdf(x) - mp_phi(x)) <= 1e-12


def test_cdf_symmetry():
    for x in np.linspace(-10, 10, 401):
        assert abs(normal_cdf(x) + normal_cdf(-x) - 1) <= 2e-12


def test_ppf():
    assert abs(normal_ppf(0.975) - 1.959963985) <= 1e-8
    for p in (1e-10, 0.01, 0.3, 0.5, 0.77, 0.999):
        assert abs(normal_cdf(normal_ppf(p)) - p) <= 1e-10 * max(1.0, p / (1 - p))
    with pytest.raises(ValueError):
        normal_ppf(1.0)


def test_moments():
    x = np.arange(10.0)
    m = moments(x)
    assert m.count == 10 and m.mean == 4.5
    assert m.variance == pytest.approx(np.var(x, ddof=1))
    assert m.mean_se == pytest.approx(math.sqrt(m.variance / 10))
    assert m.variance_se == pytest.approx(m.variance * math.sqrt(2 / 9))
    with pytest.raises(ValueError):
        moments([1.0])


def test_kolmogorov_series_against_scipy():
    for lam in np.linspace(0.05, 3, 60):
        assert kolmogorov_q(lam) == pytest.approx(scipy.special.kolmogorov(lam), abs=1e-11)
    assert kolmogorov_q(0.0) == 1.0


def test_ks_quantile_grid():
    m = 1000
    x = [normal_ppf((i - 0.5) / m) for i in range(1, m + 1)]
    res = ks_test(x, 0.0, 1.0)
    assert res.statistic <= 0.5 / m + 1e-12
    assert res.p_value > 0.999


def test_ks_shifted():
    m = 1000
    x = np.array([normal_ppf((i - 0.5) / m) for i in range(1, m + 1)]) + 1.0
    res = ks_test(x, 0.0, 1.0)
    assert res.statistic == pytest.approx(normal_cdf(0.5) - normal_cdf(-0.5), abs=2e-3)
    assert res.p_value < 1e-12


def test_ks_statistic_matches_scipy():
    rng = np.random.default_rng(5)
    x = rng.normal(0.3, 1.7, size=700)
    res = ks_test(x, 0.3, 1.7**2)
    ref = scipy.stats.kstest(x, "norm", args=(0.3, 1.7))
    assert res.statistic == pytest.approx(ref.statistic, abs=1e-12)


def test_ks_degenerate():
    with pytest.raises(ValueError, match="degenerate predicted law"):
        ks_test(np.zeros(200), 0.0, 0.0)


def test_ks_needs_100():
    with pytest.raises(ValueError):
        ks_test(np.zeros(99), 0.0, 1.0)


def test_ks_p_monotone_in_d():
    lams = np.linspace(0.1, 2.5, 50)
    ps = [kolmogorov_q(l) for l in lams]
    assert all(b <= a for a, b in zip(ps, ps[1:]))


def test_ks_calibration():
    rng = np.random.default_rng(2024)
    rejections = sum(ks_test(rng.standard_normal(500), 0.0, 1.0).p_value < 0.05 for _ in range(200))
    assert 2 <= rejections <= 25


def test_qq_points():
    with pytest.raises(ValueError):
        qq_points([1.0], 0.0, 1.0)
    m = 50
    theo = [2.0 + 3.0 * normal_ppf((i - 0.5) / m) for i in range(1, m + 1)]
    pts = qq_points(theo[::-1], 2.0, 9.0)
    for t, e in pts:
        assert abs(t - e) <= 1e-9


def test_qq_monotone():
    rng = np.random.default_rng(1)
    pts = qq_points(rng.standard_normal(300), 0.5, 2.0)
    t, e = zip(*pts)
    assert all(b >= a for a, b in zip(t, t[1:]))
    assert all(b >= a for a, b in zip(e, e[1:]))


def test_quantiles_nondecreasing():
    q = quantiles(np.random.default_rng(0).exponential(size=1000))
    assert 0 <= q["q50"] <= q["q90"] <= q["q99"]
    assert quantiles(np.zeros(10)) == {"q50": 0.0, "q90": 0.0, "q99": 0.0}
