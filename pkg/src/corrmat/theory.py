"""Asymptotic predictions for ``lambda_1(A_N) - 2 N theta`` and exact finite-N moments."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .kernel import Kernel


@dataclass(frozen=True)
class Predictions:
    center: float
    alpha: float
    sigma2: float
    degenerate: bool

    def to_dict(self) -> dict:
        return asdict(self)


def axis_sum(kernel: Kernel) -> float:
    """``sum_i R(i, 0) + R(0, i)``; the limit of ``E(1' W^2 1) / N^2``."""
    return math.fsum(r for u, v, r in kernel.entries if v == 0) + \
        math.fsum(r for u, v, r in kernel.entries if u == 0)


def predict(kernel: Kernel, theta: float, n: int) -> Predictions:
    if not theta > 0:
        raise ValueError(f"theta must be > 0, got {theta!r}")
    alpha = axis_sum(kernel) / (2 * theta)
    sigma2 = 4 * kernel.total_sum
    return Predictions(2 * n * theta, alpha, sigma2, kernel.total_sum == 0)


def exact_var_quad(kernel: Kernel, n: int) -> float:
    """Exact ``Var(1' W 1) = 4 sum (n-|u|)(n-|v|) R(u,v)`` over lags inside the window."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return 4 * math.fsum((n - abs(u)) * (n - abs(v)) * r
                         for u, v, r in kernel.entries if abs(u) < n and abs(v) < n)


def triple_count(n: int, u: int, v: int) -> int:
    """``#{(i,j,k) in [n]^3 : i - j = u, j - k = v}``."""
    return max(0, min(n, n - u, n + v) - max(1, 1 - u, 1 + v) + 1)


def exact_mean_w2(kernel: Kernel, n: int) -> float:
    """Exact ``E(1' W^2 1)``.

    Expanding ``W(i,j) W(j,k)`` gives the two same-column/same-row sums
    ``n sum_u (n-|u|) (R(u,0) + R(0,u))`` and the chained sum
    ``2 sum_{u,v} T_n(u,v) R(u,v)`` with ``T_n`` from :func:`triple_count`.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    same = []
    chain = []
    for u, v, r in kernel.entries:
        if v == 0 and abs(u) < n:
            same.append((n - abs(u)) * r)
        if u == 0 and abs(v) < n:
            same.append((n - abs(v)) * r)
        chain.append(triple_count(n, u, v) * r)
    return n * math.fsum(same) + 2 * math.fsum(chain)


def lag_autocorr(x: np.ndarray, lag: int) -> float:
    """``sum_i x_i x_{i+lag}`` with out-of-range entries treated as zero."""
    n = len(x)
    lag = abs(lag)
    if lag >= n:
        return 0.0
    return float(x[:n - lag] @ x[lag:])


def exact_var_quadform(kernel: Kernel, x) -> float:
    """Exact ``Var(x' W x) = 4 sum R(u,v) c(u) c(v)`` with ``c`` the lag autocorrelation of ``x``."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or len(x) > 32:
        raise ValueError("x must be a vector of length <= 32")
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    return 4 * math.fsum(r * lag_autocorr(x, u) * lag_autocorr(x, v)
                         for u, v, r in kernel.entries)


def var_quad_product_bound(kernel: Kernel, n: int) -> float:
    """``4 sum (|u|/n ^ 1)(|v|/n ^ 1) |R(u,v)|`` as a bound on ``|Var(1'W1)/n^2 - sigma^2|``.

    The product form is zero for kernels living on one axis, where the true
    deviation is not; :func:`var_quad_window_bound` is the valid version.
    """
    return 4 * math.fsum(min(abs(u) / n, 1.0) * min(abs(v) / n, 1.0) * abs(r)
                         for u, v, r in kernel.entries)


def var_quad_window_bound(kernel: Kernel, n: int) -> float:
    """``4 sum (1 - (1-|u|/n)_+ (1-|v|/n)_+) |R(u,v)|``, always >= the true deviation."""
    return 4 * math.fsum(
        (1.0 - max(0.0, 1 - abs(u) / n) * max(0.0, 1 - abs(v) / n)) * abs(r)
        for u, v, r in kernel.entries)


def mean_w2_bound(kernel: Kernel, n: int) -> float:
    """Remainder bound ``C / n`` on ``|E(1'W^2 1)/n^2 - sum_i (R(i,0)+R(0,i))|``, valid for n >= radius."""
    return 3 * kernel.abs_sum * (1 + kernel.radius) / n


def finite_n_oracles(kernel: Kernel, n: int) -> dict:
    return {"n": n, "var_quad": exact_var_quad(kernel, n), "mean_w2": exact_mean_w2(kernel, n)}
