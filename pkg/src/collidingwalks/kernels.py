"""Exact transition kernels of the planar simple random walk.

Everything downstream (replica weights, renewal laws, transfer matrices)
is built from ``q_n(x)``, the probability that the walk started at the
origin sits at ``x`` after ``n`` steps.  This module provides:

* box-truncated tables of ``q_n(x)`` built by the exact 4-neighbour
  stencil, with the lost boundary mass tracked per step,
* the closed-form diagonal ``q_{2n}(0) = (binom(2n,n) 4^{-n})^2``
  evaluated overflow-safely,
* the expected pair-collision time ``R_N = sum_{n<=N} q_{2n}(0)`` together
  with its logarithmic asymptote ``(log N + alpha)/pi``,
* a heat-kernel comparator (diagnostic only, never a substitute for exact
  values), and
* a Monte Carlo estimate of the running-maximum deviation probability
  ``P(max_{k<=n} |S_k| > R sqrt(n))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy.special import gammaln

from .errors import TruncationError
from .rng import stream

EULER_GAMMA = float(np.euler_gamma)

#: additive constant in R_N = (log N)/pi + alpha/pi + o(1)
ALPHA = EULER_GAMMA + math.log(16.0) - math.pi

#: 4-neighbour step set of the walk
STEPS = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]], dtype=np.int8)

#: cap used by strict truncation mode unless overridden
DEFAULT_DEFICIT_CAP = 1e-9


@dataclass(frozen=True)
class CollisionTimeConstant:
    """The constant pair (gamma, alpha) of the collision-time asymptotics."""

    gamma_euler: float = EULER_GAMMA
    alpha: float = ALPHA

    def __post_init__(self):
        expected = self.gamma_euler + math.log(16.0) - math.pi
        if abs(self.alpha - expected) > 1e-15:
            raise ValueError("alpha must equal gamma + log 16 - pi")


COLLISION_TIME_CONSTANT = CollisionTimeConstant()


class LatticePoint(NamedTuple):
    x1: int
    x2: int

    def parity(self, n: int) -> int:
        return (n + self.x1 + self.x2) & 1


def parity(n: int, x) -> int:
    """Parity of a space-time point; kernel entries with parity 1 vanish."""
    return (n + int(x[0]) + int(x[1])) & 1


def default_radius(n_steps: int, scale: float = 8.0) -> int:
    """Box half-width covering the diffusive range after ``n_steps`` steps."""
    return max(1, math.ceil(scale * math.sqrt(max(n_steps, 1))))


def _stencil4(a: np.ndarray) -> np.ndarray:
    """One exact step of the 4-neighbour walk on a box; boundary mass is dropped."""
    out = np.zeros_like(a)
    out[1:, :] += a[:-1, :]
    out[:-1, :] += a[1:, :]
    out[:, 1:] += a[:, :-1]
    out[:, :-1] += a[:, 1:]
    out *= 0.25
    return out


@dataclass
class KernelTable:
    """Exact ``q_n(x)`` for ``0 <= n <= N`` on the box ``|x|_inf <= radius``.

    ``values[n]`` is the slice at time ``n`` with the origin at the centre;
    ``truncation_deficit[n]`` is the probability mass lost outside the box
    by step ``n`` (non-decreasing in ``n``).  Completed tables are immutable
    by convention and safe to share across threads.
    """

    N: int
    radius: int
    values: np.ndarray
    truncation_deficit: np.ndarray = field(repr=False)

    @property
    def side(self) -> int:
        return 2 * self.radius + 1

    def value(self, n: int, x) -> float:
        if not 0 <= n <= self.N:
            raise ValueError(f"time {n} outside horizon {self.N}")
        x1, x2 = int(x[0]), int(x[1])
        if max(abs(x1), abs(x2)) > self.radius:
            raise ValueError(f"point {(x1, x2)} outside box radius {self.radius}")
        if (n + x1 + x2) & 1:
            return 0.0
        return float(self.values[n, x1 + self.radius, x2 + self.radius])

    def slice(self, n: int) -> np.ndarray:
        return self.values[n]

    def squared_slice(self, n: int) -> np.ndarray:
        """``q_n^2(x)`` on the box; shared by the replica recursion and renewal law."""
        s = self.values[n]
        return s * s

    def mass(self, n: int) -> float:
        return float(self.values[n].sum())


def build_kernel_table(
    N: int,
    radius: int | None = None,
    *,
    strict: bool = False,
    deficit_cap: float = DEFAULT_DEFICIT_CAP,
) -> KernelTable:
    """Build the exact kernel table by repeated stencil application.

    The step law has support 4, so the direct stencil is both exact and
    faster than any transform method.  In strict mode a box too small to
    keep ``truncation_deficit(N)`` under ``deficit_cap`` is rejected.
    """
    if N < 0:
        raise ValueError("N must be >= 0")
    if radius is None:
        radius = default_radius(N)
    if radius < 1:
        raise ValueError("radius must be >= 1")
    side = 2 * radius + 1
    values = np.zeros((N + 1, side, side))
    deficit = np.zeros(N + 1)
    values[0, radius, radius] = 1.0
    lost = 0.0
    prev_mass = 1.0
    for n in range(1, N + 1):
        values[n] = _stencil4(values[n - 1])
        mass = float(values[n].sum())
        lost += prev_mass - mass
        lost = max(lost, 0.0)
        deficit[n] = lost
        prev_mass = mass
    if strict and deficit[N] > deficit_cap:
        raise TruncationError(
            f"truncation deficit {deficit[N]:.3e} exceeds cap {deficit_cap:.3e} "
            f"at N={N}, radius={radius}"
        )
    return KernelTable(N=N, radius=radius, values=values, truncation_deficit=deficit)


_EXACT_DIAGONAL_MAX = 30


def log_diagonal_return(n) -> np.ndarray:
    """``log q_{2n}(0)`` via log-gamma; vectorised, safe for huge ``n``."""
    n = np.asarray(n, dtype=np.float64)
    return 2.0 * (gammaln(2.0 * n + 1.0) - 2.0 * gammaln(n + 1.0) - n * math.log(4.0))


def diagonal_return(n: int, log: bool = False) -> float:
    """Return probability ``q_{2n}(0)`` of the walk, by the closed form.

    Exact integer arithmetic is used for small ``n`` (the result is then a
    dyadic rational represented exactly in a double); log-gamma otherwise.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if log:
        return float(log_diagonal_return(n))
    if n <= _EXACT_DIAGONAL_MAX:
        return (math.comb(2 * n, n) / 4**n) ** 2
    value = math.exp(float(log_diagonal_return(n)))
    if value == 0.0:
        raise OverflowError(
            f"q_{{2n}}(0) underflows at n={n}; request log-space output instead"
        )
    return value


def diagonal_returns(N: int) -> np.ndarray:
    """Vector of ``q_{2n}(0)`` for ``n = 1..N`` (index 0 unused, set to 0)."""
    out = np.zeros(N + 1)
    small = min(N, _EXACT_DIAGONAL_MAX)
    for n in range(1, small + 1):
        out[n] = (math.comb(2 * n, n) / 4**n) ** 2
    if N > small:
        ns = np.arange(small + 1, N + 1, dtype=np.float64)
        out[small + 1 :] = np.exp(log_diagonal_return(ns))
    return out


class ExpectedCollisionTime(NamedTuple):
    value: float
    residual: float
    N: int


def collision_time_asymptote(N: int) -> float:
    """Leading behaviour ``(log N + alpha)/pi`` of the expected collision time."""
    return (math.log(N) + ALPHA) / math.pi


@lru_cache(maxsize=64)
def _r_n_cached(N: int) -> float:
    return float(expected_collision_times(np.array([N]))[0])


def r_n(N: int) -> float:
    """Plain ``R_N`` as a float, cached (used heavily by the replica module)."""
    return _r_n_cached(int(N))


def expected_collision_time(N: int) -> ExpectedCollisionTime:
    """``R_N = sum_{n=1}^{N} q_{2n}(0)`` with the residual against the asymptote."""
    if N < 1:
        raise ValueError("N must be >= 1")
    value = r_n(N)
    return ExpectedCollisionTime(value, value - collision_time_asymptote(N), N)


def expected_collision_times(checkpoints) -> np.ndarray:
    """``R_N`` at several horizons in one cumulative pass (chunked, exact)."""
    cps = np.asarray(sorted(int(c) for c in checkpoints), dtype=np.int64)
    if cps.size == 0:
        return np.zeros(0)
    if cps[0] < 1:
        raise ValueError("horizons must be >= 1")
    out = np.zeros(cps.size)
    total = 0.0
    lo = 1
    chunk = 4_000_000
    idx = 0
    while lo <= cps[-1]:
        hi = min(lo + chunk - 1, int(cps[-1]))
        ns = np.arange(lo, hi + 1, dtype=np.float64)
        small = ns <= _EXACT_DIAGONAL_MAX
        vals = np.exp(log_diagonal_return(ns))
        if small.any():
            vals[small] = [diagonal_return(int(n)) for n in ns[small]]
        cum = np.cumsum(vals)
        while idx < cps.size and lo <= cps[idx] <= hi:
            out[idx] = total + cum[cps[idx] - lo]
            idx += 1
        total += float(cum[-1])
        lo = hi + 1
    return out


def heat_kernel_approx(n: int, x) -> float:
    """Local-limit comparator ``2 g_{n/2}(x) 1{parity 0}``; diagnostic only."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if parity(n, x):
        return 0.0
    t = n / 2.0
    r2 = float(x[0]) ** 2 + float(x[1]) ** 2
    return 2.0 * math.exp(-r2 / (2.0 * t)) / (2.0 * math.pi * t)


class MaxDeviationEstimate(NamedTuple):
    probability: float
    standard_error: float
    n: int
    ratio: float
    replicates: int


def max_deviation_estimate(
    n: int,
    ratio: float,
    replicates: int,
    seed: int,
    batch: int = 256,
) -> MaxDeviationEstimate:
    """Monte Carlo estimate of ``P(max_{k<=n} |S_k| > ratio*sqrt(n))``.

    Exhibits a feasible decay constant for the sub-Gaussian bound
    ``exp(-c ratio^2)``.  Replicates are keyed by batch index, so the
    result depends only on ``(seed, n, ratio, replicates)``.
    """
    if n < 1 or ratio <= 0 or replicates < 1:
        raise ValueError("need n >= 1, ratio > 0, replicates >= 1")
    threshold2 = ratio * ratio * n
    hits = 0
    done = 0
    b = 0
    while done < replicates:
        m = min(batch, replicates - done)
        g = stream(seed, "max-deviation", n, float(ratio), b)
        ix = g.integers(0, 4, size=(m, n))
        pos = np.cumsum(STEPS[ix], axis=1, dtype=np.int64)
        norm2 = pos[..., 0].astype(np.float64) ** 2 + pos[..., 1].astype(np.float64) ** 2
        hits += int((norm2.max(axis=1) > threshold2).sum())
        done += m
        b += 1
    p = hits / replicates
    se = math.sqrt(max(p * (1.0 - p), 1.0 / replicates) / replicates)
    return MaxDeviationEstimate(p, se, n, ratio, replicates)
