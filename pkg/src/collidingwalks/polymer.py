"""Directed polymer in a Gaussian space-time environment.

The partition function is computed exactly per environment by a forward
weighted DP over the walk's box, so the only randomness left in a moment
estimate is the environment average (the variance-optimal estimator short
of tilting).  Environment slices are generated on the fly from the keyed
counter stream, never stored.  The normalising cumulant is hard-coded to
``beta^2/2``, the log-moment generating function of the standard normal
environment law.

Integer moments of the partition function equal exponential moments of
collision local times; the tiny-scale check integrates the environment out
analytically site by site and compares against the path-enumeration oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from multiprocessing import get_context

import numpy as np

from .errors import BudgetError
from .montecarlo import LaplaceEstimate
from .rng import stream

POLYMER_RADIUS_SCALE = 4.0


def polymer_radius(N: int, scale: float = POLYMER_RADIUS_SCALE) -> int:
    """Box half-width for the polymer DP.

    A single walk's coordinate standard deviation is sqrt(N/2), so the
    default ``4 sqrt(N)`` is a 5.7-sigma box: the untracked boundary loss
    is below 1e-7, orders of magnitude under any Monte Carlo tolerance
    used here.
    """
    return max(1, math.ceil(scale * math.sqrt(max(N, 1))))


@dataclass(frozen=True)
class Environment:
    """I.i.d. standard-normal field on ``{1..N} x box``, reproducible from its key."""

    N: int
    radius: int
    seed: int
    index: int = 0

    @property
    def side(self) -> int:
        return 2 * self.radius + 1

    def slices(self):
        """Yield the field one time slice at a time, drawn from the keyed stream."""
        g = stream(self.seed, "polymer-env", self.index)
        side = self.side
        for _ in range(self.N):
            yield g.standard_normal((side, side))

    def materialize(self, max_cells: int = 50_000_000) -> np.ndarray:
        cells = self.N * self.side**2
        if cells > max_cells:
            raise BudgetError(f"environment of {cells} cells is too large to materialise")
        return np.stack(list(self.slices()))


@dataclass(frozen=True)
class PartitionSample:
    value: float
    beta_env: float
    N: int
    start: tuple
    env_index: int

    def __post_init__(self):
        if self.value <= 0:
            raise ValueError("partition function values are positive")


def _stencil4_into(a: np.ndarray, out: np.ndarray) -> None:
    out[:] = 0.0
    out[..., 1:, :] += a[..., :-1, :]
    out[..., :-1, :] += a[..., 1:, :]
    out[..., :, 1:] += a[..., :, :-1]
    out[..., :, :-1] += a[..., :, 1:]
    out *= 0.25


def partition_function(
    N: int, beta_env: float, env: Environment, start=(0, 0)
) -> PartitionSample:
    """Exact ``Z`` for one environment by the forward weighted DP.

    ``u_n(y) = sum_z q_1(y-z) u_{n-1}(z) * exp(beta*omega(n,y) - beta^2/2)``
    with ``u_0`` a point mass at ``start``; ``Z`` is the final total mass.
    """
    if env.N != N:
        raise ValueError("environment horizon mismatch")
    r = env.radius
    sx, sy = int(start[0]), int(start[1])
    if max(abs(sx), abs(sy)) > r:
        raise ValueError("start site outside the box")
    lam = 0.5 * beta_env * beta_env
    u = np.zeros((env.side, env.side))
    u[sx + r, sy + r] = 1.0
    buf = np.empty_like(u)
    for omega in env.slices():
        _stencil4_into(u, buf)
        u, buf = buf, u
        if beta_env != 0.0:
            u *= np.exp(beta_env * omega - lam)
    return PartitionSample(float(u.sum()), beta_env, N, (sx, sy), env.index)


def scaled_environment_coupling(beta: float, N: int) -> float:
    """The environment coupling ``beta * sqrt(pi / log N)`` of the moment identity."""
    if N < 2:
        raise ValueError("N must be >= 2")
    return beta * math.sqrt(math.pi / math.log(N))


def _moment_rows(args):
    seed, N, betas_env, radius, lo, hi = args
    k = len(betas_env)
    side = 2 * radius + 1
    lams = [0.5 * b * b for b in betas_env]
    out = np.empty((hi - lo,))
    fields = np.empty((k, side, side))
    buf = np.empty_like(fields)
    wbuf = np.empty((side, side))
    for e in range(lo, hi):
        fields[:] = 0.0
        fields[:, radius, radius] = 1.0
        env = Environment(N=N, radius=radius, seed=seed, index=e)
        for omega in env.slices():
            _stencil4_into(fields, buf)
            fields, buf = buf, fields
            for i, (b, lam) in enumerate(zip(betas_env, lams)):
                if b == 0.0:
                    continue
                np.multiply(omega, b, out=wbuf)
                wbuf -= lam
                np.exp(wbuf, out=wbuf)
                fields[i] *= wbuf
        out[e - lo] = float(np.prod(fields.reshape(k, -1).sum(axis=1)))
    return lo, out


def _environment_products(
    N: int, betas_env, replicates: int, seed: int, radius: int, workers: int
) -> np.ndarray:
    jobs = _partition_range(replicates, workers)
    args = [(seed, N, tuple(betas_env), radius, lo, hi) for lo, hi in jobs]
    if workers > 1 and len(args) > 1:
        with get_context("fork").Pool(workers) as pool:
            parts = pool.map(_moment_rows, args)
    else:
        parts = [_moment_rows(a) for a in args]
    parts.sort(key=lambda t: t[0])
    return np.concatenate([p[1] for p in parts])


def _partition_range(total: int, workers: int):
    chunks = max(1, min(total, workers * 4))
    bounds = np.linspace(0, total, chunks + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def moment_estimate(
    N: int,
    beta: float,
    h: int,
    replicates: int,
    seed: int,
    *,
    radius_scale: float = POLYMER_RADIUS_SCALE,
    workers: int = 1,
) -> LaplaceEstimate:
    """Monte Carlo ``E[Z^h]`` at environment coupling ``beta sqrt(pi/log N)``.

    One DP pass per environment; only environment randomness remains.  The
    limit regime needs ``beta^2 < 1``; values near 1 make ``Z^h`` heavy
    tailed and are flagged by the inherited warning in the estimator.
    """
    if h < 1 or replicates < 1:
        raise ValueError("need h >= 1, replicates >= 1")
    beta_env = scaled_environment_coupling(beta, N)
    zs = _environment_products(
        N, [beta_env], replicates, seed, polymer_radius(N, radius_scale), workers
    )
    w = zs**h
    se = float(w.std(ddof=1) / math.sqrt(w.size)) if w.size > 1 else float("nan")
    return LaplaceEstimate(float(w.mean()), se, w.size, (float(beta),) * (h * (h - 1) // 2))


def mixed_moment_estimate(
    N: int,
    betas,
    replicates: int,
    seed: int,
    *,
    radius_scale: float = POLYMER_RADIUS_SCALE,
    workers: int = 1,
) -> LaplaceEstimate:
    """Monte Carlo ``E[Z_1 ... Z_h]`` with all factors sharing one environment.

    Each factor carries its own coupling ``beta_i sqrt(pi/log N)``; the DP
    advances all fields through a slice before the slice is discarded.
    Requires ``beta_i beta_j < 1`` for all pairs.
    """
    betas = [float(b) for b in betas]
    for i in range(len(betas)):
        for j in range(i + 1, len(betas)):
            if betas[i] * betas[j] >= 1.0:
                raise ValueError(f"beta_{i + 1} * beta_{j + 1} >= 1 is outside the regime")
    envs = [scaled_environment_coupling(b, N) for b in betas]
    prods = _environment_products(
        N, envs, replicates, seed, polymer_radius(N, radius_scale), workers
    )
    se = float(prods.std(ddof=1) / math.sqrt(prods.size)) if prods.size > 1 else float("nan")
    pair_betas = tuple(
        betas[i] * betas[j]
        for i in range(len(betas))
        for j in range(i + 1, len(betas))
    )
    return LaplaceEstimate(float(prods.mean()), se, prods.size, pair_betas)


def exact_second_moment_small(N: int, beta_env: float) -> float:
    """``E[Z^2]`` with the environment integrated out analytically site by site.

    For every pair of walk paths, each occupied space-time site contributes
    the exact Gaussian factor ``E[exp(beta*k*omega - k*beta^2/2)] =
    exp(beta^2 k(k-1)/2)`` where ``k`` is the site's occupancy.  Budgeted at
    N <= 4 (4^(2N) path pairs); the value must coincide with the
    path-enumeration Laplace oracle at raw exponent ``beta_env^2``.
    """
    if N > 4:
        raise BudgetError("analytic environment integration capped at N = 4")
    from .oracle import _all_walk_positions

    pos = _all_walk_positions(N)
    count = pos.shape[0]
    paths = [tuple((int(p[t, 0]), int(p[t, 1])) for t in range(N)) for p in pos]
    b2 = beta_env * beta_env
    total = 0.0
    for a in range(count):
        pa = paths[a]
        for b in range(count):
            pb = paths[b]
            occupancy = {}
            for t in range(N):
                occupancy[(t, pa[t])] = occupancy.get((t, pa[t]), 0) + 1
                occupancy[(t, pb[t])] = occupancy.get((t, pb[t]), 0) + 1
            w = 1.0
            for k in occupancy.values():
                w *= math.exp(b2 * k * (k - 1) / 2.0)
            total += w
    return total / count**2
