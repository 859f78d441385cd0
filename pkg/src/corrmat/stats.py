"""Moments with standard errors, a one-sample KS test against a normal law, Q-Q points."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from statistics import NormalDist

import numpy as np

_SQRT2 = math.sqrt(2.0)
_STD = NormalDist()


@dataclass(frozen=True)
class MomentSummary:
    count: int
    mean: float
    mean_se: float
    variance: float
    variance_se: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float
    size: int

    def to_dict(self) -> dict:
        return asdict(self)


def moments(samples) -> MomentSummary:
    x = np.asarray(samples, dtype=float)
    m = len(x)
    if m < 2:
        raise ValueError("need at least 2 samples")
    var = float(x.var(ddof=1))
    return MomentSummary(m, float(x.mean()), math.sqrt(var / m), var,
                         var * math.sqrt(2.0 / (m - 1)))


def normal_cdf(x: float) -> float:
    """Standard normal CDF through ``erfc``, accurate in both tails."""
    return 0.5 * math.erfc(-x / _SQRT2)


def normal_ppf(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p!r}")
    return _STD.inv_cdf(p)


def kolmogorov_q(lam: float, eps: float = 1e-12, max_terms: int = 10_000) -> float:
    """Asymptotic Kolmogorov tail ``Q(lam) = 2 sum_{k>=1} (-1)^(k-1) exp(-2 k^2 lam^2)``.

    Below ``lam = 1`` the alternating series loses digits to cancellation, so
    the equivalent theta-function form of ``1 - Q`` is summed instead.
    """
    if lam <= 0:
        return 1.0
    if lam < 1.0:
        c = math.pi**2 / (8 * lam * lam)
        total = 0.0
        for k in range(1, max_terms + 1):
            term = math.exp(-(2 * k - 1) ** 2 * c)
            total += term
            if term < eps * total or term == 0.0:
                break
        return min(1.0, max(0.0, 1.0 - math.sqrt(2 * math.pi) / lam * total))
    total = 0.0
    for k in range(1, max_terms + 1):
        term = math.exp(-2.0 * k * k * lam * lam)
        total += term if k % 2 else -term
        if term < eps:
            break
    return min(1.0, max(0.0, 2.0 * total))


def ks_test(samples, mu: float, sigma2: float) -> KsResult:
    """KS distance to ``N(mu, sigma2)`` with the asymptotic p-value (M >= 100)."""
    if not sigma2 > 0:
        raise ValueError("degenerate predicted law; use concentration check instead")
    x = np.sort(np.asarray(samples, dtype=float))
    m = len(x)
    if m < 100:
        raise ValueError(f"KS p-values need at least 100 samples, got {m}")
    sd = math.sqrt(sigma2)
    cdf = 0.5 * np.array([math.erfc(-(xi - mu) / (sd * _SQRT2)) for xi in x])
    i = np.arange(1, m + 1)
    d = float(max((i / m - cdf).max(), (cdf - (i - 1) / m).max()))
    sq = math.sqrt(m)
    p = kolmogorov_q((sq + 0.12 + 0.11 / sq) * d)
    return KsResult(d, p, m)


def qq_points(samples, mu: float, sigma2: float) -> list[tuple[float, float]]:
    x = np.sort(np.asarray(samples, dtype=float))
    m = len(x)
    if m < 2:
        raise ValueError("need at least 2 samples")
    sd = math.sqrt(sigma2)
    return [(mu + sd * normal_ppf((i - 0.5) / m), float(x[i - 1])) for i in range(1, m + 1)]


def quantiles(values, levels=(0.5, 0.9, 0.99)) -> dict[str, float]:
    v = np.asarray(values, dtype=float)
    return {f"q{round(100 * q):d}": float(np.quantile(v, q)) for q in levels}
