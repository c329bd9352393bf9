"""Special functions and goodness-of-fit statistics used by the test suite.

The regularized lower incomplete gamma function is implemented here (power
series and Lentz continued fraction, plus the exact Erlang form for integer
shape) rather than imported, so the Gamma goodness-of-fit path is fully
self-contained and can be unit-tested against the series/continued-fraction
identities and an external reference.
"""

from __future__ import annotations

import math
from typing import Callable, NamedTuple

import numpy as np

_MAX_ITER = 500
_EPS = 1e-15


def _lower_series(s: float, x: float) -> float:
    """P(s,x) by the ascending series; converges well for x < s + 1."""
    term = 1.0 / s
    total = term
    a = s
    for _ in range(_MAX_ITER):
        a += 1.0
        term *= x / a
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + s * math.log(x) - math.lgamma(s))

def _upper_continued_fraction(s: float, x: float) -> float:
    """Q(s,x) by the Lentz continued fraction; converges well for x >= s + 1."""
    tiny = 1e-300
    b = x + 1.0 - s
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h * math.exp(-x + s * math.log(x) - math.lgamma(s))


def regularized_gamma_cdf(shape: float, x) -> np.ndarray | float:
    """Regularized lower incomplete gamma ``P(shape, x)`` (the Gamma(shape,1) CDF).

    Integer shapes use the exact Erlang sum ``1 - e^{-x} sum_{j<k} x^j/j!``;
    fractional shapes switch between the series and the continued fraction.
    """
    if shape <= 0:
        raise ValueError("shape must be positive")
    arr = np.asarray(x, dtype=np.float64)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    if np.any(arr < 0):
        raise ValueError("x must be nonnegative")
    k = int(round(shape))
    if abs(shape - k) < 1e-12 and k >= 1:
        # Erlang closed form, vectorised and stable: the partial exponential sum
        # is evaluated in log space relative to its largest term.
        out = np.zeros_like(arr)
        pos = arr > 0
        xs = arr[pos]
        term = np.ones_like(xs)
        total = np.ones_like(xs)
        for j in range(1, k):
            term = term * xs / j
            total += term
        out[pos] = -np.expm1(-xs + np.log(total))
        return float(out[0]) if scalar else out
    out = np.empty_like(arr)
    for i, xi in enumerate(arr):
        if xi == 0.0:
            out[i] = 0.0
        elif xi < shape + 1.0:
            out[i] = _lower_series(shape, float(xi))
        else:
            out[i] = 1.0 - _upper_continued_fraction(shape, float(xi))
    return float(out[0]) if scalar else np.clip(out, 0.0, 1.0)


def exponential_cdf(x) -> np.ndarray | float:
    """CDF of the rate-1 exponential law."""
    arr = np.asarray(x, dtype=np.float64)
    return -np.expm1(-np.clip(arr, 0.0, None))


def ks_statistic(sample: np.ndarray, cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """Two-sided Kolmogorov-Smirnov distance between a sample and a reference CDF."""
    xs = np.sort(np.asarray(sample, dtype=np.float64))
    n = xs.size
    if n == 0:
        raise ValueError("empty sample")
    f = np.asarray(cdf(xs), dtype=np.float64)
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - f)
    d_minus = np.max(f - (i - 1) / n)
    return float(max(d_plus, d_minus))


def ks_critical_value(n: int, alpha: float = 0.01) -> float:
    """Asymptotic KS critical value with the standard finite-n correction.

    ``c(alpha) = sqrt(ln(2/alpha)/2)``; at the 1% level ``c = 1.628`` so the
    usual rule of thumb 1.63/sqrt(n) is recovered for large n.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0,1)")
    c = math.sqrt(0.5 * math.log(2.0 / alpha))
    rn = math.sqrt(n)
    return c / (rn + 0.12 + 0.11 / rn)


def chi_square_critical(df: int, alpha: float = 0.01) -> float:
    """Upper-``alpha`` critical value of the chi-square law via bisection."""
    if df < 1:
        raise ValueError("df must be >= 1")
    target = 1.0 - alpha
    lo, hi = 0.0, max(10.0 * df, 50.0)
    while regularized_gamma_cdf(df / 2.0, hi / 2.0) < target:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if regularized_gamma_cdf(df / 2.0, mid / 2.0) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class CorrelationEstimate(NamedTuple):
    value: float
    ci_low: float
    ci_high: float
    n: int


def pearson_correlation(x: np.ndarray, y: np.ndarray, z_mult: float = 3.0) -> CorrelationEstimate:
    """Pearson correlation with a Fisher-z interval of half-width ``z_mult`` SE."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.size
    if n < 4 or y.size != n:
        raise ValueError("need two equal-length samples of size >= 4")
    r = float(np.corrcoef(x, y)[0, 1])
    r = max(min(r, 1.0 - 1e-15), -1.0 + 1e-15)
    z = math.atanh(r)
    half = z_mult / math.sqrt(n - 3)
    return CorrelationEstimate(r, math.tanh(z - half), math.tanh(z + half), n)
