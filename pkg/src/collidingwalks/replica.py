"""Replica weights of a colliding walk pair and their renewal representation.

``U(n, x)`` is the total weight of collision streams of one pair of walks
constrained to end with a collision at ``(n, x)``: each collision carries a
factor ``sigma = exp(pi*beta/log N) - 1`` and each gap between collisions a
squared walk kernel.  Factoring the last collision point turns the defining
series into the production recursion

    U(n, .) = sigma * q_n^2 + sigma * sum_{0<m<n} U(m, .) (*) q_{n-m}^2,

whose spatial sum closes over the diagonal ``q_{2m}(0)`` alone, so marginals
are computed exactly with no box truncation.  The same weights rewrite as a
geometric mixture over a renewal process whose step law is
``q_n^2(x)/R_N``; that identity, the resulting crude bounds, and exact
samplers for the renewal law live here too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.fft import irfft2, next_fast_len, rfft2

from .errors import BudgetError, TruncationError
from .kernels import (
    DEFAULT_DEFICIT_CAP,
    KernelTable,
    build_kernel_table,
    default_radius,
    diagonal_returns,
    r_n,
)
from .rng import stream

MAX_SPATIAL_HORIZON = 128


@dataclass(frozen=True)
class BetaMatrix:
    """Pair coupling strengths ``beta(i, j) < 1`` for ``1 <= i < j <= h``."""

    h: int
    values: tuple

    def __post_init__(self):
        if self.h < 2:
            raise ValueError("need at least two walks")
        npairs = self.h * (self.h - 1) // 2
        if len(self.values) != npairs:
            raise ValueError(f"expected {npairs} couplings, got {len(self.values)}")
        for b in self.values:
            if not b < 1.0:
                raise ValueError(f"coupling {b} is not < 1")

    @classmethod
    def uniform(cls, h: int, beta: float) -> "BetaMatrix":
        return cls(h=h, values=tuple([float(beta)] * (h * (h - 1) // 2)))

    @classmethod
    def from_dict(cls, h: int, mapping) -> "BetaMatrix":
        vals = []
        for i, j in pair_indices(h):
            if (i, j) not in mapping:
                raise ValueError(f"missing coupling for pair ({i},{j})")
            vals.append(float(mapping[(i, j)]))
        return cls(h=h, values=tuple(vals))

    @property
    def bar_beta(self) -> float:
        return max(self.values)

    def get(self, i: int, j: int) -> float:
        if i > j:
            i, j = j, i
        return self.values[_pair_rank(self.h, i, j)]

    def pairs(self):
        return list(zip(pair_indices(self.h), self.values))

    def as_dict(self):
        return {pair: b for pair, b in self.pairs()}


def pair_indices(h: int):
    """Lexicographic walk pairs ``(i, j)``, 1-indexed."""
    return [(i, j) for i in range(1, h + 1) for j in range(i + 1, h + 1)]


def _pair_rank(h: int, i: int, j: int) -> int:
    if not 1 <= i < j <= h:
        raise ValueError(f"invalid pair ({i},{j}) for h={h}")
    return (i - 1) * (2 * h - i) // 2 + (j - i - 1)


def pair_exponent(beta: float, N: int) -> float:
    """The per-collision exponent ``pi*beta/log N``."""
    if N < 2:
        raise ValueError("N must be >= 2 (log N must be positive)")
    return math.pi * beta / math.log(N)


def sigma(beta: float, N: int) -> float:
    """Per-collision weight ``exp(pi*beta/log N) - 1``; sign matches beta."""
    return math.expm1(pair_exponent(beta, N))


def replica_marginals(N: int, beta: float) -> np.ndarray:
    """Exact spatially-summed weights ``U(n)`` for ``n = 0..N``.

    Uses the closed-form diagonal, so there is no spatial truncation; cost
    is O(N^2) multiply-adds.  ``U(0) = 1`` by the empty-stream convention.
    """
    if N < 2:
        raise ValueError("N must be >= 2")
    sig = sigma(beta, N)
    d = diagonal_returns(N)
    flip = d[::-1].copy()  # flip[i] = d[N - i]
    u = np.zeros(N + 1)
    u[0] = 1.0
    for n in range(1, N + 1):
        inner = d[n]
        if n > 1:
            inner += float(u[1:n] @ flip[N - n + 1 : N])
        u[n] = sig * inner
    return u


def replica_total(N: int, beta: float) -> float:
    """``sum_{n≤N} U(n)``, the exact pair Laplace transform at scaled beta."""
    return float(replica_marginals(N, beta).sum())


@dataclass
class ReplicaTable:
    """Spatial replica weights on a box plus the exact marginals.

    ``marginal[n]`` comes from the untruncated recursion, so
    ``truncation_deficit[n] = marginal[n] - sum_x spatial[n, x]`` measures
    exactly the weight the box loses.
    """

    N: int
    beta: float
    sigma: float
    radius: int
    spatial: np.ndarray = field(repr=False)
    marginal: np.ndarray = field(repr=False)
    truncation_deficit: np.ndarray = field(repr=False)

    @property
    def side(self) -> int:
        return 2 * self.radius + 1

    def spatial_value(self, n: int, x) -> float:
        if not 0 <= n <= self.N:
            raise ValueError(f"time {n} outside horizon {self.N}")
        x1, x2 = int(x[0]), int(x[1])
        if max(abs(x1), abs(x2)) > self.radius:
            raise ValueError(f"point {(x1, x2)} outside box radius {self.radius}")
        return float(self.spatial[n, x1 + self.radius, x2 + self.radius])


def _wrap_embed(a: np.ndarray, radius: int, shape) -> np.ndarray:
    """Embed a centred box slice into a padded array with the origin at [0,0]."""
    side = a.shape[0]
    out = np.zeros(shape)
    rows = (np.arange(side) - radius) % shape[0]
    cols = (np.arange(side) - radius) % shape[1]
    out[np.ix_(rows, cols)] = a
    return out


def _wrap_extract(a: np.ndarray, radius: int, side: int) -> np.ndarray:
    rows = (np.arange(side) - radius) % a.shape[0]
    cols = (np.arange(side) - radius) % a.shape[1]
    return a[np.ix_(rows, cols)]


def build_replica_table(
    N: int,
    beta: float,
    radius: int | None = None,
    *,
    strict: bool = False,
    deficit_cap: float = DEFAULT_DEFICIT_CAP,
    kernel_table: KernelTable | None = None,
) -> ReplicaTable:
    """Build the spatial replica table by the convolution recursion.

    The time recursion is accumulated in Fourier space (one forward
    transform per squared kernel, one inverse per slice); padding is wide
    enough that wrap-around touches only mass far below round-off.  Spatial
    tables are capped at N = MAX_SPATIAL_HORIZON; marginals at any horizon
    come from :func:`replica_marginals`.
    """
    if N < 2:
        raise ValueError("N must be >= 2")
    if N > MAX_SPATIAL_HORIZON:
        raise BudgetError(
            f"spatial replica tables are capped at N={MAX_SPATIAL_HORIZON} "
            f"(requested {N}); use replica_marginals for larger horizons"
        )
    if kernel_table is None:
        kernel_table = build_kernel_table(N, radius)
    radius = kernel_table.radius
    side = kernel_table.side
    sig = sigma(beta, N)
    shape = (next_fast_len(2 * side - 1), next_fast_len(2 * side - 1))

    ghat = np.empty((N + 1, shape[0], shape[1] // 2 + 1), dtype=np.complex128)
    for m in range(1, N + 1):
        ghat[m] = rfft2(_wrap_embed(kernel_table.squared_slice(m), radius, shape))
    uhat = np.empty_like(ghat)
    delta = np.zeros(shape)
    delta[0, 0] = 1.0
    uhat[0] = rfft2(delta)
    for n in range(1, N + 1):
        acc = uhat[0] * ghat[n]
        for m in range(1, n):
            acc += uhat[m] * ghat[n - m]
        uhat[n] = sig * acc

    spatial = np.zeros((N + 1, side, side))
    spatial[0, radius, radius] = 1.0
    for n in range(1, N + 1):
        spatial[n] = _wrap_extract(irfft2(uhat[n], s=shape), radius, side)
    marginal = replica_marginals(N, beta)
    deficit = marginal - spatial.reshape(N + 1, -1).sum(axis=1)
    if strict and abs(deficit[N]) > deficit_cap:
        raise TruncationError(
            f"replica truncation deficit {deficit[N]:.3e} exceeds cap {deficit_cap:.3e}"
        )
    return ReplicaTable(
        N=N,
        beta=beta,
        sigma=sig,
        radius=radius,
        spatial=spatial,
        marginal=marginal,
        truncation_deficit=deficit,
    )


# ---------------------------------------------------------------------------
# Renewal representation
# ---------------------------------------------------------------------------


@dataclass
class RenewalLaw:
    """The step law ``P(T = n, X = x) = q_n^2(x)/R_N`` on ``1 <= n <= N``."""

    N: int
    r_n: float
    t_marginal: np.ndarray = field(repr=False)  # index 0 unused
    kernel_table: KernelTable | None = field(default=None, repr=False)
    _cdf_cache: dict = field(default_factory=dict, repr=False)

    def t_probability(self, n: int) -> float:
        if not 1 <= n <= self.N:
            return 0.0
        return float(self.t_marginal[n])

    def probability(self, n: int, x) -> float:
        if self.kernel_table is None:
            raise ValueError("law was built without spatial support")
        return self.kernel_table.value(n, x) ** 2 / self.r_n

    def t_mean(self) -> float:
        return float(np.arange(self.N + 1) @ self.t_marginal)

    def spatial_cdf(self, n: int):
        if self.kernel_table is None:
            raise ValueError("law was built without spatial support")
        if n not in self._cdf_cache:
            sq = self.kernel_table.squared_slice(n).ravel()
            total = sq.sum()
            self._cdf_cache[n] = (np.cumsum(sq) / total, total)
        return self._cdf_cache[n]


def renewal_step_law(
    N: int,
    radius: int | None = None,
    *,
    include_spatial: bool = True,
    max_cells: int = 200_000_000,
) -> RenewalLaw:
    """Build the renewal step law; the T-marginal is exact at any horizon."""
    if N < 1:
        raise ValueError("N must be >= 1")
    d = diagonal_returns(N)
    rn = float(d.sum())
    t_marg = d / rn
    table = None
    if include_spatial:
        if radius is None:
            radius = min(default_radius(N), N)
        cells = (N + 1) * (2 * radius + 1) ** 2
        if cells > max_cells:
            raise BudgetError(
                f"spatial renewal table needs {cells} cells (> {max_cells}); "
                "pass include_spatial=False for time-only use"
            )
        table = build_kernel_table(N, radius)
    return RenewalLaw(N=N, r_n=rn, t_marginal=t_marg, kernel_table=table)


def renewal_convolution(N: int, k_max: int) -> np.ndarray:
    """``P(tau_k = n)`` for ``0 <= k <= k_max``, ``0 <= n <= N``.

    Row ``k`` is the k-fold convolution of the step-time marginal
    ``q_{2n}(0)/R_N``; entries with ``n > N`` are dropped (irrelevant for
    every identity on the horizon).
    """
    if k_max < 0:
        raise ValueError("k_max must be >= 0")
    law = renewal_step_law(N, include_spatial=False)
    t = law.t_marginal
    out = np.zeros((k_max + 1, N + 1))
    out[0, 0] = 1.0
    for k in range(1, k_max + 1):
        out[k] = np.convolve(out[k - 1], t)[: N + 1]
    return out


class RenewalIdentityReport(NamedTuple):
    max_abs_error: float
    k_max: int
    sigma_rn: float


def renewal_identity_check(N: int, beta: float, tol: float = 1e-12) -> RenewalIdentityReport:
    """Check ``U(n) = sum_k (sigma R_N)^k P(tau_k = n)`` against the recursion.

    ``k_max`` is chosen from the geometric tail bound
    ``(sigma R_N)^{k+1}/(1 - sigma R_N) < tol`` (and never exceeds ``N``,
    since ``tau_k > n`` whenever ``k > n``).  Refuses ``sigma R_N >= 1``,
    where the geometric tail bound is unavailable.
    """
    sig = sigma(beta, N)
    srn = sig * r_n(N)
    if abs(srn) >= 1.0:
        raise ValueError(f"identity check requires |sigma R_N| < 1, got {srn:.4f}")
    if srn != 0.0:
        k_tail = math.ceil(math.log(tol * (1.0 - abs(srn))) / math.log(abs(srn))) - 1
        k_max = max(0, min(N, k_tail))
    else:
        k_max = 0
    conv = renewal_convolution(N, k_max)
    weights = srn ** np.arange(k_max + 1)
    recon = weights @ conv
    err = float(np.max(np.abs(recon - replica_marginals(N, beta))))
    return RenewalIdentityReport(err, k_max, srn)


@dataclass
class RenewalPath:
    """A sampled renewal trajectory: jumps plus partial sums."""

    jumps: list
    times: np.ndarray
    positions: np.ndarray


def draw_renewal_steps(law: RenewalLaw, count: int, rng: np.random.Generator):
    """Draw ``count`` i.i.d. ``(T, X)`` pairs by inverse CDF, exact w.r.t. the law."""
    cdf_t = np.cumsum(law.t_marginal)
    cdf_t /= cdf_t[-1]
    ts = np.searchsorted(cdf_t, rng.random(count), side="right")
    xs = None
    if law.kernel_table is not None:
        side = law.kernel_table.side
        radius = law.kernel_table.radius
        xs = np.empty((count, 2), dtype=np.int64)
        for n in np.unique(ts):
            idx = np.nonzero(ts == n)[0]
            cdf, _ = law.spatial_cdf(int(n))
            flat = np.searchsorted(cdf, rng.random(idx.size), side="right")
            xs[idx, 0] = flat // side - radius
            xs[idx, 1] = flat % side - radius
    return ts.astype(np.int64), xs


def sample_renewal(law: RenewalLaw, rng: np.random.Generator) -> RenewalPath:
    """Sample jumps until the running time would pass the horizon ``N``.

    Jumps are kept while ``tau_k <= N``; the first draw crossing the
    horizon is discarded, so the returned times satisfy ``tau_k <= N``.
    """
    jumps = []
    tau = 0
    pos = np.zeros(2, dtype=np.int64)
    times = [0]
    positions = [pos.copy()]
    while True:
        t, x = draw_renewal_steps(law, 1, rng)
        t = int(t[0])
        if tau + t > law.N:
            break
        tau += t
        x0 = x[0] if x is not None else np.zeros(2, dtype=np.int64)
        pos = pos + x0
        jumps.append((t, (int(x0[0]), int(x0[1]))))
        times.append(tau)
        positions.append(pos.copy())
    return RenewalPath(jumps=jumps, times=np.array(times), positions=np.array(positions))


def sample_renewal_by_seed(N: int, seed: int, index: int = 0, **law_kwargs) -> RenewalPath:
    law = renewal_step_law(N, **law_kwargs)
    return sample_renewal(law, stream(seed, "renewal-path", N, index))


# ---------------------------------------------------------------------------
# Crude bounds
# ---------------------------------------------------------------------------


class CrudeBoundReport(NamedTuple):
    N: int
    bar_beta: float
    sigma_rn: float
    u_sum: float
    u_sum_is_bound: bool
    feasible_beta_prime: float


def crude_bound_check(N: int, betas: BetaMatrix, exact_cap: int = 100_000) -> CrudeBoundReport:
    """Evaluate both crude-bound left-hand sides at the worst coupling.

    The constrained-evolution sum collapses by Cauchy-Schwarz equality to
    ``sigma_N * R_N`` exactly; the replica sum is ``sum_n U(n)``, computed
    exactly up to ``exact_cap`` and otherwise reported as the dominating
    geometric value ``1/(1 - sigma_N R_N)`` (valid because every renewal
    probability is at most 1).  The smallest feasible bound parameter is
    reported rather than asserted, since the horizon where the paper's
    inequalities kick in is not quantified.
    """
    bar = betas.bar_beta
    sig = sigma(bar, N)
    srn = sig * r_n(N)
    if N <= exact_cap:
        u_sum = replica_total(N, bar)
        is_bound = False
    else:
        if srn >= 1.0:
            raise ValueError("geometric bound unavailable: sigma R_N >= 1")
        u_sum = 1.0 / (1.0 - srn)
        is_bound = True
    feasible = max(srn, 1.0 - 1.0 / u_sum) if u_sum > 0 else srn
    return CrudeBoundReport(N, bar, srn, u_sum, is_bound, feasible)


def renewal_tail_constant(N: int, k_max: int | None = None) -> float:
    """Observed constant in ``P(tau_k = n) <= C k q_{2n}(0) / R_N`` (report only)."""
    if k_max is None:
        k_max = min(N, 64)
    conv = renewal_convolution(N, k_max)
    t = renewal_step_law(N, include_spatial=False).t_marginal
    best = 0.0
    for k in range(1, k_max + 1):
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = conv[k, 1:] / (k * t[1:])
        ratio = ratio[np.isfinite(ratio)]
        if ratio.size:
            best = max(best, float(ratio.max()))
    return best
