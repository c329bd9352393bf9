"""Large-scale simulation of colliding planar walks and limit-law tests.

``h`` independent walks advance step-synchronously; collisions are counted
per pair per step from positions only (no stored paths), so memory per
replicate is O(h) words times the horizon for the vectorised step buffer.
Each walk consumes its own random stream keyed by (seed, replicate, walk),
which makes every sample reproducible independently of worker count and
lets a single pass report collision counts at several intermediate
horizons (used for trend tests in N with common random numbers).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from multiprocessing import get_context
from typing import NamedTuple

import numpy as np

from .kernels import STEPS, r_n
from .replica import BetaMatrix, pair_exponent, pair_indices
from .rng import stream
from .special import (
    CorrelationEstimate,
    exponential_cdf,
    ks_critical_value,
    ks_statistic,
    pearson_correlation,
    regularized_gamma_cdf,
)


@dataclass(frozen=True)
class CollisionSample:
    """Collision counts of one replicate at one horizon (pairs in lexicographic order)."""

    h: int
    N: int
    counts: tuple

    def __post_init__(self):
        if any(c < 0 or c > self.N for c in self.counts):
            raise ValueError("collision counts must lie in [0, N]")


@dataclass
class CollisionRun:
    """Counts for all replicates at each checkpoint horizon.

    ``counts[r, c, p]`` is the number of collisions of pair ``p`` (in
    :func:`pair_indices` order) up to horizon ``checkpoints[c]`` in
    replicate ``r``.
    """

    h: int
    seed: int
    checkpoints: tuple
    counts: np.ndarray = field(repr=False)

    @property
    def replicates(self) -> int:
        return self.counts.shape[0]

    def at_horizon(self, N: int) -> np.ndarray:
        if N not in self.checkpoints:
            raise ValueError(f"horizon {N} not among checkpoints {self.checkpoints}")
        return self.counts[:, self.checkpoints.index(N), :]

    def rescaled(self, N: int) -> np.ndarray:
        """``pi * L / log N`` (natural log, as in the rescaling convention)."""
        return rescale(self.at_horizon(N), N)

    def samples(self, N: int):
        for row in self.at_horizon(N):
            yield CollisionSample(self.h, N, tuple(int(v) for v in row))


def rescale(counts: np.ndarray, N: int) -> np.ndarray:
    if N < 2:
        raise ValueError("N must be >= 2 for the logarithmic rescaling")
    return math.pi * np.asarray(counts, dtype=np.float64) / math.log(N)


def _simulate_rows(args):
    seed, h, checkpoints, lo, hi = args
    ncp = len(checkpoints)
    npairs = h * (h - 1) // 2
    n_max = checkpoints[-1]
    cp_idx = np.asarray(checkpoints, dtype=np.int64) - 1
    pairs = pair_indices(h)
    out = np.zeros((hi - lo, ncp, npairs), dtype=np.int64)
    steps = np.empty((n_max, h), dtype=np.uint8)
    for r in range(lo, hi):
        for w in range(h):
            steps[:, w] = stream(seed, "collision-walk", r, w).integers(
                0, 4, size=n_max, dtype=np.uint8
            )
        pos = np.cumsum(STEPS[steps], axis=0, dtype=np.int32)
        for p, (i, j) in enumerate(pairs):
            eq = (pos[:, i - 1, 0] == pos[:, j - 1, 0]) & (
                pos[:, i - 1, 1] == pos[:, j - 1, 1]
            )
            out[r - lo, :, p] = np.cumsum(eq)[cp_idx]
    return lo, out


def simulate_collisions(
    N: int,
    h: int,
    replicates: int,
    seed: int,
    *,
    checkpoints=None,
    workers: int = 1,
) -> CollisionRun:
    """Simulate ``replicates`` independent h-walk systems up to horizon ``N``.

    ``checkpoints`` (default ``(N,)``) asks for collision counts at several
    intermediate horizons from the same trajectories.  Results depend only
    on ``(seed, replicate index)``; parallel workers merely partition the
    replicate range.
    """
    if N < 1 or h < 2 or replicates < 1:
        raise ValueError("need N >= 1, h >= 2, replicates >= 1")
    cps = tuple(sorted(int(c) for c in (checkpoints or (N,))))
    if cps[0] < 1 or cps[-1] != N or len(set(cps)) != len(cps):
        raise ValueError("checkpoints must be distinct, >= 1, and end at N")
    jobs = _partition_range(replicates, workers)
    args = [(seed, h, cps, lo, hi) for lo, hi in jobs]
    if workers > 1 and len(args) > 1:
        with get_context("fork").Pool(workers) as pool:
            parts = pool.map(_simulate_rows, args)
    else:
        parts = [_simulate_rows(a) for a in args]
    parts.sort(key=lambda t: t[0])
    counts = np.concatenate([p[1] for p in parts], axis=0)
    return CollisionRun(h=h, seed=seed, checkpoints=cps, counts=counts)


def _partition_range(total: int, workers: int):
    chunks = max(1, min(total, workers * 4))
    bounds = np.linspace(0, total, chunks + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


@dataclass(frozen=True)
class LaplaceEstimate:
    value: float
    standard_error: float
    replicates: int
    betas: tuple
    provenance: str = "monte-carlo"

    def __post_init__(self):
        if self.value <= 0:
            raise ValueError("Laplace transform estimates are positive")


def empirical_laplace(counts: np.ndarray, betas: BetaMatrix, N: int) -> LaplaceEstimate:
    """Mean of ``exp(sum_{i<j} pi beta_ij L_ij / log N)`` with its standard error."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 2 or counts.shape[1] != len(betas.values):
        raise ValueError("counts must be (replicates, npairs) matching betas")
    if betas.bar_beta >= 0.5:
        warnings.warn(
            f"bar beta = {betas.bar_beta:.3f} >= 0.5: the weight exp(..) is "
            "heavy-tailed and the standard error may be unreliable",
            stacklevel=2,
        )
    theta = np.array([pair_exponent(b, N) for b in betas.values])
    w = np.exp(counts @ theta)
    n = w.size
    se = float(w.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return LaplaceEstimate(float(w.mean()), se, n, tuple(betas.values))


@dataclass(frozen=True)
class GofReport:
    kind: str  # KS | chi-square | correlation
    value: float
    sample_size: int
    reference: str
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind == "KS" and not 0.0 <= self.value <= 1.0:
            raise ValueError("KS statistic out of [0,1]")
        if self.kind == "correlation" and not -1.0 <= self.value <= 1.0:
            raise ValueError("correlation out of [-1,1]")


def test_exponential(rescaled: np.ndarray, alpha: float = 0.01) -> GofReport:
    """Two-sided KS of one pair's rescaled collision time against Exp(1)."""
    y = np.asarray(rescaled, dtype=np.float64).ravel()
    d = ks_statistic(y, exponential_cdf)
    return GofReport(
        kind="KS",
        value=d,
        sample_size=y.size,
        reference="Exp(1)",
        extras={
            "mean": float(y.mean()),
            "variance": float(y.var(ddof=1)),
            "critical_value": ks_critical_value(y.size, alpha),
            "alpha": alpha,
        },
    )


def test_gamma_total(counts: np.ndarray, h: int, N: int, alpha: float = 0.01) -> GofReport:
    """KS of the total rescaled collision time against Gamma(h(h-1)/2, 1)."""
    shape = h * (h - 1) // 2
    totals = rescale(np.asarray(counts).sum(axis=1), N)
    d = ks_statistic(totals, lambda x: regularized_gamma_cdf(shape, x))
    return GofReport(
        kind="KS",
        value=d,
        sample_size=totals.size,
        reference=f"Gamma({shape},1)",
        extras={
            "mean": float(totals.mean()),
            "variance": float(totals.var(ddof=1)),
            "shape": shape,
            "critical_value": ks_critical_value(totals.size, alpha),
            "alpha": alpha,
        },
    )


class FactorizationGap(NamedTuple):
    beta: float
    joint: float
    joint_se: float
    pair_product: float
    gap: float
    gap_se: float


@dataclass
class IndependenceReport:
    N: int
    correlations: dict
    factorization: list


def test_pairwise_independence(
    counts: np.ndarray, N: int, beta_grid=(0.2, 0.3, 0.5)
) -> IndependenceReport:
    """Correlations of rescaled coordinates plus Laplace factorization gaps.

    The gap for coupling ``beta`` is ``M(beta on all pairs) - prod_p M_p`` with
    all transforms estimated from the same replicates; its standard error is
    propagated through the delta method with the full sample covariance of
    the per-replicate weights.
    """
    counts = np.asarray(counts, dtype=np.float64)
    n, npairs = counts.shape
    h = int(round((1 + math.sqrt(1 + 8 * npairs)) / 2))
    if h * (h - 1) // 2 != npairs or h < 3:
        raise ValueError("need counts for all pairs of at least three walks")
    pairs = pair_indices(h)
    y = rescale(counts, N)
    correlations = {}
    for a in range(npairs):
        for b in range(a + 1, npairs):
            correlations[(pairs[a], pairs[b])] = pearson_correlation(y[:, a], y[:, b])
    rows = []
    for beta in beta_grid:
        theta = pair_exponent(beta, N)
        g = np.exp(theta * counts)  # (n, npairs) per-pair weights
        f = np.prod(g, axis=1)  # joint weight
        means = np.concatenate([[f.mean()], g.mean(axis=0)])
        cov = np.cov(np.column_stack([f, g]).T, ddof=1)
        prod_all = float(np.prod(means[1:]))
        grad = np.concatenate(
            [[1.0], [-prod_all / means[1 + p] for p in range(npairs)]]
        )
        gap = float(means[0] - prod_all)
        gap_se = float(math.sqrt(max(grad @ cov @ grad, 0.0) / n))
        joint_se = float(math.sqrt(cov[0, 0] / n))
        rows.append(
            FactorizationGap(float(beta), float(means[0]), joint_se, prod_all, gap, gap_se)
        )
    return IndependenceReport(N=N, correlations=correlations, factorization=rows)


class MeanIdentityReport(NamedTuple):
    pair: tuple
    sample_mean: float
    standard_error: float
    exact: float
    z_score: float


def collision_mean_reports(counts: np.ndarray, N: int) -> list:
    """Per-pair sample mean of ``L`` against the exact expectation ``R_N``."""
    counts = np.asarray(counts, dtype=np.float64)
    n, npairs = counts.shape
    h = int(round((1 + math.sqrt(1 + 8 * npairs)) / 2))
    exact = r_n(N)
    out = []
    for p, pair in enumerate(pair_indices(h)):
        m = float(counts[:, p].mean())
        se = float(counts[:, p].std(ddof=1) / math.sqrt(n))
        out.append(MeanIdentityReport(pair, m, se, exact, (m - exact) / se if se else 0.0))
    return out
