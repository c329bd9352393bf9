"""Exact (non-Monte-Carlo) joint Laplace transforms of collision local times.

Three independent exact routes are provided and cross-checked against each
other in the tests:

* weighted transfer-matrix dynamic programming on difference lattices
  (``laplace_pair_exact`` on Z^2 for two walks, ``laplace_triple_exact`` on
  Z^2 x Z^2 for three),
* brute-force enumeration over all walk-path tuples (``brute_force_laplace``,
  the ground truth at tiny scale), and
* direct summation of the chaos expansion organised by coincidence
  partitions (``chaos_term``), plus the spatially-summed rewired series
  (``rewired_sum``) with its product upper bound.

Collision indicators depend on the walks only through their differences,
which collapses the state space from (Z^2)^h to Z^2 (h=2) or (Z^2)^2 (h=3);
this reduction is validated against brute force, never assumed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from itertools import product as iproduct

import numpy as np
from scipy.signal import fftconvolve

from .errors import BudgetError, TruncationError
from .kernels import (
    DEFAULT_DEFICIT_CAP,
    build_kernel_table,
    default_radius,
    diagonal_returns,
)
from .replica import BetaMatrix, pair_exponent, pair_indices, replica_marginals, sigma

# ---------------------------------------------------------------------------
# Difference step laws
# ---------------------------------------------------------------------------


def _enumerate_difference_law():
    """Step law of S^(1) - S^(2), enumerated from the 16 step pairs."""
    steps = [(1, 0), (-1, 0), (0, 1), (0, -1)]
    acc = {}
    for a in steps:
        for b in steps:
            d = (a[0] - b[0], a[1] - b[1])
            acc[d] = acc.get(d, 0.0) + 1.0 / 16.0
    offsets = np.array(sorted(acc), dtype=np.int64)
    probs = np.array([acc[tuple(o)] for o in offsets])
    return offsets, probs


DIFFERENCE_OFFSETS, DIFFERENCE_PROBS = _enumerate_difference_law()


def _enumerate_triple_difference_law():
    """Joint step law of (S1-S2, S2-S3), enumerated from the 64 step triples."""
    steps = [(1, 0), (-1, 0), (0, 1), (0, -1)]
    acc = {}
    for a, b, c in iproduct(steps, steps, steps):
        d = (a[0] - b[0], a[1] - b[1], b[0] - c[0], b[1] - c[1])
        acc[d] = acc.get(d, 0.0) + 1.0 / 64.0
    offsets = np.array(sorted(acc), dtype=np.int64)
    probs = np.array([acc[tuple(o)] for o in offsets])
    return offsets, probs


def _apply_stencil(a: np.ndarray, offsets: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """One step of a finite-support walk on a box: ``out(x) = sum_z p(z) a(x-z)``."""
    out = np.zeros_like(a)
    shape = a.shape
    for off, p in zip(offsets, probs):
        dst = []
        src = []
        for axis, d in enumerate(off):
            d = int(d)
            n = shape[axis]
            dst.append(slice(max(d, 0), n + min(d, 0)))
            src.append(slice(max(-d, 0), n + min(-d, 0)))
        out[tuple(dst)] += p * a[tuple(src)]
    return out


@dataclass(frozen=True)
class OracleDetail:
    value: float
    truncation_deficit: float


def _difference_radius(N: int, radius: int | None, scale: float = 8.0) -> int:
    # the difference walk reaches at most 2N in sup norm, so small horizons
    # can always be evaluated with zero truncation
    if radius is not None:
        return radius
    return min(default_radius(N, scale), 2 * N)


def laplace_pair_exact(
    N: int,
    beta_raw: float | None = None,
    beta_scaled: float | None = None,
    radius: int | None = None,
    *,
    strict: bool = False,
    deficit_cap: float = DEFAULT_DEFICIT_CAP,
    detail: bool = False,
):
    """``E[exp(b * L_N)]`` for one pair of walks, by weighted DP on Z^2.

    ``b`` is ``beta_raw`` as given, or ``pi*beta_scaled/log N``.  Runs the
    difference-walk recursion ``v_n = weight * (p * v_{n-1})`` with the
    collision weight ``e^b`` applied at the origin after each step.
    """
    if (beta_raw is None) == (beta_scaled is None):
        raise ValueError("pass exactly one of beta_raw, beta_scaled")
    b = float(beta_raw) if beta_raw is not None else pair_exponent(beta_scaled, N)
    if N < 1:
        raise ValueError("N must be >= 1")
    r = _difference_radius(N, radius)
    side = 2 * r + 1
    v = np.zeros((side, side))
    v[r, r] = 1.0
    w = math.exp(b)
    lost = 0.0
    for _ in range(N):
        mass_in = float(v.sum())
        v = _apply_stencil(v, DIFFERENCE_OFFSETS, DIFFERENCE_PROBS)
        lost += mass_in - float(v.sum())
        v[r, r] *= w
    if strict and lost > deficit_cap:
        raise TruncationError(f"pair DP deficit {lost:.3e} exceeds cap {deficit_cap:.3e}")
    value = float(v.sum())
    return OracleDetail(value, lost) if detail else value


_TRIPLE_OFFSETS, _TRIPLE_PROBS = _enumerate_triple_difference_law()

# per-walk factor stencils for (D12, D23) = (S1-S2, S2-S3):
# a step of walk 1 shifts D12, a step of walk 3 shifts -D23, and a step of
# walk 2 shifts (-D12, +D23) jointly.  Composing the three 4-outcome passes
# is the exact factorisation of the 64-outcome joint law.
_UNIT = [(1, 0), (-1, 0), (0, 1), (0, -1)]
_W1_OFFSETS = np.array([(a, b, 0, 0) for a, b in _UNIT], dtype=np.int64)
_W2_OFFSETS = np.array([(-a, -b, a, b) for a, b in _UNIT], dtype=np.int64)
_W3_OFFSETS = np.array([(0, 0, -a, -b) for a, b in _UNIT], dtype=np.int64)
_QUARTER = np.full(4, 0.25)


def laplace_triple_exact(
    N: int,
    betas,
    radius: int | None = None,
    *,
    scaled: bool = False,
    strict: bool = False,
    deficit_cap: float = DEFAULT_DEFICIT_CAP,
    factored: bool = True,
    max_cells: int = 60_000_000,
    detail: bool = False,
):
    """Joint ``E[exp(b12 L12 + b13 L13 + b23 L23)]`` for three walks.

    ``betas`` is ``(b12, b13, b23)``; with ``scaled=True`` each entry is a
    coupling ``beta < 1`` and the exponent ``pi*beta/log N`` is formed
    internally.  The state is the pair of differences ``(D12, D23)``; with
    ``factored=True`` each step is three 4-outcome stencil passes (one per
    walk), otherwise the enumerated joint law is applied in one pass (the
    two are validated against each other in the tests).
    """
    b12, b13, b23 = (float(x) for x in betas)
    if scaled:
        b12, b13, b23 = (pair_exponent(x, N) for x in (b12, b13, b23))
    if N < 1:
        raise ValueError("N must be >= 1")
    r = _difference_radius(N, radius)
    side = 2 * r + 1
    if side**4 > max_cells:
        raise BudgetError(
            f"triple DP needs {side**4} cells (> {max_cells}); shrink N or radius"
        )
    v = np.zeros((side,) * 4)
    v[r, r, r, r] = 1.0
    w12, w13, w23 = math.exp(b12), math.exp(b13), math.exp(b23)
    # D13 = D12 + D23 vanishes on the anti-diagonal plane of index pairs
    ii, jj = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    lost = 0.0
    for _ in range(N):
        mass_in = float(v.sum())
        if factored:
            v = _apply_stencil(v, _W1_OFFSETS, _QUARTER)
            v = _apply_stencil(v, _W2_OFFSETS, _QUARTER)
            v = _apply_stencil(v, _W3_OFFSETS, _QUARTER)
        else:
            v = _apply_stencil(v, _TRIPLE_OFFSETS, _TRIPLE_PROBS)
        lost += mass_in - float(v.sum())
        if w12 != 1.0:
            v[r, r, :, :] *= w12
        if w23 != 1.0:
            v[:, :, r, r] *= w23
        if w13 != 1.0:
            v[ii, jj, 2 * r - ii, 2 * r - jj] *= w13
    if strict and lost > deficit_cap:
        raise TruncationError(f"triple DP deficit {lost:.3e} exceeds cap {deficit_cap:.3e}")
    value = float(v.sum())
    return OracleDetail(value, lost) if detail else value


# ---------------------------------------------------------------------------
# Brute-force ground truth
# ---------------------------------------------------------------------------


def _all_walk_positions(N: int) -> np.ndarray:
    """Positions of every length-N walk path: array (4^N, N, 2)."""
    steps = np.array(_UNIT, dtype=np.int8)
    count = 4**N
    idx = np.arange(count)
    pos = np.zeros((count, N, 2), dtype=np.int8)
    cur = np.zeros((count, 2), dtype=np.int8)
    for t in range(N):
        digit = (idx // 4**t) % 4
        cur = cur + steps[digit]
        pos[:, t, :] = cur
    return pos


def _pair_collision_matrix(pos: np.ndarray) -> np.ndarray:
    """L[a, b] = number of times paths a and b coincide, for all path pairs."""
    count, N, _ = pos.shape
    L = np.zeros((count, count), dtype=np.int16)
    for t in range(N):
        eq = (pos[:, None, t, 0] == pos[None, :, t, 0]) & (
            pos[:, None, t, 1] == pos[None, :, t, 1]
        )
        L += eq
    return L


def _normalize_betas_raw(h: int, betas_raw) -> dict:
    if np.isscalar(betas_raw):
        return {pair: float(betas_raw) for pair in pair_indices(h)}
    if isinstance(betas_raw, dict):
        return {pair: float(betas_raw[pair]) for pair in pair_indices(h)}
    vals = list(betas_raw)
    pairs = pair_indices(h)
    if len(vals) != len(pairs):
        raise ValueError(f"expected {len(pairs)} couplings for h={h}")
    return dict(zip(pairs, (float(v) for v in vals)))


def brute_force_laplace(N: int, h: int, betas_raw) -> float:
    """Exact ``E^{(x)h}[exp(sum_{i<j} b_ij L^{(i,j)})]`` over all 4^(hN) path tuples.

    The sum is organised through per-pair collision-count matrices, which is
    an exact refactoring of the full tuple enumeration.  Refuses h*N > 12.
    """
    if h not in (2, 3):
        raise BudgetError("brute force supports h in {2, 3}")
    if h * N > 12:
        raise BudgetError(f"h*N = {h * N} exceeds the enumeration budget of 12")
    b = _normalize_betas_raw(h, betas_raw)
    pos = _all_walk_positions(N)
    count = pos.shape[0]
    L = _pair_collision_matrix(pos)
    if h == 2:
        return float(np.exp(b[(1, 2)] * L).mean())
    a12 = np.exp(b[(1, 2)] * L)
    a13 = np.exp(b[(1, 3)] * L)
    a23 = np.exp(b[(2, 3)] * L)
    inner = a12.T @ a13  # sum over walk-1 paths -> (j, k)
    return float((inner * a23).sum() / count**3)


def collision_count_distribution(N: int) -> np.ndarray:
    """Exact law of the pair collision count: array p[l] = P(L_N = l), h = 2."""
    if N > 5:
        raise BudgetError("distribution enumeration capped at N = 5")
    L = _pair_collision_matrix(_all_walk_positions(N))
    counts = np.bincount(L.ravel(), minlength=N + 1).astype(np.float64)
    return counts / L.size


# ---------------------------------------------------------------------------
# Chaos expansion, organised by coincidence partitions
# ---------------------------------------------------------------------------

TRIPLE_PART = frozenset({1, 2, 3})


@dataclass(frozen=True)
class ChaosTerm:
    order: int
    value: float
    mode: str


def _coincidence_weight(part: frozenset, sig: dict) -> float:
    """Total collision weight of a coincidence set.

    A pair contributes its sigma.  A triple point collects every edge subset
    that ties the three walks together (the partition is generated by the
    marked pairs, so all connected edge subsets on the part contribute):
    s12 s13 + s12 s23 + s13 s23 + s12 s13 s23.  This is the weight under
    which the partition expansion reproduces the raw expansion exactly; the
    tests pin it against brute force.
    """
    if len(part) == 2:
        i, j = sorted(part)
        return sig[(i, j)]
    if len(part) == 3:
        s12, s13, s23 = sig[(1, 2)], sig[(1, 3)], sig[(2, 3)]
        return s12 * s13 + s12 * s23 + s13 * s23 + s12 * s13 * s23
    raise ValueError("parts of size > 3 are out of budget")


class _GridKernels:
    """Memoized pointwise powers q_dt^m on a centred box of radius 2N.

    The horizon is 2N because eliminating a collision point composes two
    transitions into one kernel of combined length (at most once per point
    for three walks).
    """

    def __init__(self, N: int):
        self.N = N
        self.radius = 2 * N
        self.table = build_kernel_table(2 * N, radius=self.radius)
        self._cache = {}

    def power(self, dt: int, m: int) -> np.ndarray:
        key = (dt, m)
        if key not in self._cache:
            self._cache[key] = self.table.slice(dt) ** m
        return self._cache[key]

    def materialize(self, specs) -> np.ndarray:
        """Pointwise product of kernel specs; spec = ('q', dt, m) or ('arr', array)."""
        out = None
        for spec in specs:
            arr = self.power(spec[1], spec[2]) if spec[0] == "q" else spec[1]
            out = arr.copy() if out is None else out * arr
        return out


def _merge_q_specs(specs):
    """Collapse repeated q kernels with the same dt into powers."""
    counts = {}
    arrays = []
    for spec in specs:
        if spec[0] == "q":
            counts[spec[1]] = counts.get(spec[1], 0) + spec[2]
        else:
            arrays.append(spec)
    return [("q", dt, m) for dt, m in sorted(counts.items())] + arrays


def _eliminate_chain(kern: _GridKernels, r: int, times, parts) -> float:
    """Spatial weight of one partition sequence at fixed collision times.

    Sums the product of walk kernels over the collision points z_1..z_r by
    eliminating the latest point first.  Each elimination either folds into
    a potential on the single neighbouring point or produces a new pairwise
    kernel by one convolution; with three walks a point never links two
    earlier points and the origin at once, so this always suffices.
    """
    t = {0: 0}
    for i, ti in enumerate(times, start=1):
        t[i] = int(ti)
    visits = {w: [0] + [i for i in range(1, r + 1) if w in parts[i - 1]] for w in (1, 2, 3)}
    edges = {}
    for w, vs in visits.items():
        for a, b in zip(vs, vs[1:]):
            edges.setdefault((a, b), []).append(("q", t[b] - t[a], 1))
    pots = {}
    scalar = 1.0
    for v in range(r, 0, -1):
        base_specs = _merge_q_specs(edges.pop((0, v), []))
        base = kern.materialize(base_specs) if base_specs else None
        pv = pots.pop(v, None)
        if pv is not None:
            base = pv if base is None else base * pv
        nbrs = sorted(u for u in range(1, v) if (u, v) in edges)
        if not nbrs:
            if base is None:
                raise RuntimeError("vertex with no incident kernels")
            scalar *= float(base.sum())
            continue
        if len(nbrs) == 1:
            u = nbrs[0]
            specs = _merge_q_specs(edges.pop((u, v)))
            if base is None:
                if len(specs) == 1 and specs[0][0] == "q" and specs[0][2] == 1:
                    # a lone transition kernel sums to one
                    continue
                scalar *= float(kern.materialize(specs).sum())
                continue
            k_arr = kern.materialize(specs)
            contrib = fftconvolve(k_arr, base, mode="same")
            pots[u] = contrib if u not in pots else pots[u] * contrib
            continue
        if len(nbrs) == 2 and base is None:
            u1, u2 = nbrs
            s1 = _merge_q_specs(edges.pop((u1, v)))
            s2 = _merge_q_specs(edges.pop((u2, v)))
            if (
                len(s1) == 1 and s1[0][0] == "q" and s1[0][2] == 1
                and len(s2) == 1 and s2[0][0] == "q" and s2[0][2] == 1
            ):
                # two lone transitions compose by Chapman-Kolmogorov
                new = [("q", s1[0][1] + s2[0][1], 1)]
            else:
                new = [("arr", fftconvolve(kern.materialize(s1), kern.materialize(s2), mode="same"))]
            edges.setdefault((u1, u2), []).extend(new)
            continue
        raise RuntimeError("elimination pattern outside the h<=3 structure")
    return scalar


def _triple_sequences(r: int, mode: str):
    parts = [frozenset({1, 2}), frozenset({1, 3}), frozenset({2, 3}), TRIPLE_PART]
    for seq in iproduct(parts, repeat=r):
        has_multi = any(len(p) == 3 for p in seq)
        if mode == "two-body" and has_multi:
            continue
        if mode == "multi" and not has_multi:
            continue
        yield seq


def _chaos_sigmas(h: int, N: int, betas: BetaMatrix | None, exponents) -> dict:
    """Per-pair collision weights sigma = e^b - 1 from couplings or raw exponents."""
    if (betas is None) == (exponents is None):
        raise ValueError("pass exactly one of betas, exponents")
    if betas is not None:
        return {pair: sigma(b, N) for pair, b in betas.pairs()}
    raw = _normalize_betas_raw(h, exponents)
    return {pair: math.expm1(b) for pair, b in raw.items()}


def chaos_term(
    N: int,
    r: int,
    betas: BetaMatrix | None = None,
    mode: str = "all",
    *,
    h: int | None = None,
    exponents=None,
    _kernels: _GridKernels | None = None,
) -> ChaosTerm:
    """The order-``r`` term of the chaos expansion of the joint Laplace transform.

    The order counts marked collision times; ``1 + sum_r`` over all orders
    recovers the exact transform (pinned against brute force and the
    transfer matrices in the tests).  ``mode`` keeps all coincidence
    sequences, only two-body ones, or only those with at least one multiple
    collision.  Pass ``betas`` for couplings scaled by ``pi/log N`` or
    ``exponents`` for raw per-pair exponent weights (with ``h``).
    """
    if mode not in ("all", "two-body", "multi"):
        raise ValueError("mode must be all | two-body | multi")
    if r < 1:
        raise ValueError("r must be >= 1")
    if betas is not None:
        h = betas.h
    if h is None:
        raise ValueError("h is required when passing raw exponents")
    sig = _chaos_sigmas(h, N, betas, exponents)
    if r > N:
        return ChaosTerm(r, 0.0, mode)  # more marked times than time slots
    if h == 2:
        if mode == "multi":
            return ChaosTerm(r, 0.0, mode)
        if N > 4096:
            raise BudgetError("pair chaos capped at N = 4096")
        s = sig[(1, 2)]
        d = diagonal_returns(N)
        f = d.copy()
        for _ in range(r - 1):
            f = np.convolve(f, d)[: N + 1]
        return ChaosTerm(r, float(s**r * f.sum()), mode)
    if h != 3:
        raise BudgetError("chaos terms support h in {2, 3}")
    if r > 3 or N > 32:
        raise BudgetError("triple chaos capped at r <= 3, N <= 32")
    kern = _kernels if _kernels is not None else _GridKernels(N)
    total = 0.0
    for seq in _triple_sequences(r, mode):
        weight = 1.0
        for part in seq:
            weight *= _coincidence_weight(part, sig)
        if weight == 0.0:
            continue
        for times in combinations(range(1, N + 1), r):
            total += weight * _eliminate_chain(kern, r, times, list(seq))
    return ChaosTerm(r, total, mode)


def chaos_series(
    N: int,
    r_max: int,
    betas: BetaMatrix | None = None,
    mode: str = "all",
    *,
    h: int | None = None,
    exponents=None,
) -> list:
    """Chaos terms for orders ``1..r_max`` (shared kernel cache for h = 3)."""
    hh = betas.h if betas is not None else h
    kern = _GridKernels(N) if hh == 3 and N >= 1 else None
    return [
        chaos_term(N, r, betas, mode, h=h, exponents=exponents, _kernels=kern)
        for r in range(1, r_max + 1)
    ]


# ---------------------------------------------------------------------------
# Rewired series
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RewiredReport:
    value: float
    by_order: tuple
    pair_product: float
    gap: float


def rewired_sum(N: int, r_max: int, betas: BetaMatrix) -> RewiredReport:
    """Spatially-summed rewired series and its product upper bound.

    Blocks of consecutive collisions of a single pair carry replica marginals
    ``U(b_k - a_k)``; a fresh block of pair ``p`` is tied back to that same
    pair's previous block end through ``sigma_p * q_{2(a_m - b_{p(m)})}(0)``.
    Consecutive blocks belong to different pairs and the first block is
    nonempty (the empty configuration is the order-0 term), which makes the
    decomposition free of double counting: for a single pair the series
    equals the pair Laplace transform exactly, and for nonnegative couplings
    it is dominated term by term by the product of pair transforms.
    """
    if r_max < 0:
        raise ValueError("r_max must be >= 0")
    if r_max > 3 or N > 64:
        raise BudgetError("rewired series capped at r_max <= 3, N <= 64")
    pairs = [p for p, _ in betas.pairs()]
    u = {p: replica_marginals(N, betas.get(*p)) for p in pairs}
    sig = {p: sigma(betas.get(*p), N) for p in pairs}
    d2 = diagonal_returns(N)
    # cu[p][a] = sum_{b=a}^{N} U_p[b - a]
    cu = {p: np.cumsum(u[p])[::-1].copy() for p in pairs}
    # g[p][t] = sigma_p * q_{2t}(0) * cu[p][t]; sg = suffix sums of g
    g = {p: sig[p] * d2 * cu[p] for p in pairs}
    sg = {p: np.concatenate([np.cumsum(g[p][::-1])[::-1], [0.0]]) for p in pairs}

    orders = [1.0]
    if r_max >= 1:
        orders.append(sum(float(u[p][1:].sum()) for p in pairs))
    if r_max >= 2:
        t2 = 0.0
        for p1 in pairs:
            rest = sum(sg[p2][2:] for p2 in pairs if p2 != p1)  # index b1 -> sg[b1+1]
            t2 += float(u[p1][1:N] @ rest[: N - 1])
        orders.append(t2)
    if r_max >= 3:
        t3 = 0.0
        for p1, p2 in iproduct(pairs, pairs):
            if p2 == p1:
                continue
            # j[a2] = sum_{b2 = a2}^{N-1} U_p2[b2 - a2] * (sum over third blocks != p2)
            for p3 in pairs:
                if p3 == p2:
                    continue
                if p3 != p1:
                    j = np.zeros(N + 1)
                    for a2 in range(1, N):
                        j[a2] = float(u[p2][: N - a2] @ sg[p3][a2 + 1 : N + 1])
                    k = np.concatenate([np.cumsum((d2 * j)[::-1])[::-1], [0.0]])
                    t3 += sig[p2] * float(u[p1][1 : N - 1] @ k[2:N])
                else:
                    for b1 in range(1, N - 1):
                        vv = np.zeros(N + 1)
                        vv[b1 + 1 :] = d2[1 : N + 1 - b1] * cu[p1][b1 + 1 :]
                        w = np.concatenate([np.cumsum(vv[::-1])[::-1], [0.0]])
                        inner = 0.0
                        for a2 in range(b1 + 1, N):
                            inner += d2[a2] * float(u[p2][: N - a2] @ w[a2 + 1 : N + 1])
                        t3 += sig[p2] * sig[p1] * float(u[p1][b1]) * inner
        orders.append(t3)

    value = float(sum(orders[: r_max + 1]))
    pair_product = 1.0
    for p in pairs:
        pair_product *= float(u[p].sum())
    gap = pair_product - value
    if all(b >= 0.0 for b in betas.values) and gap < -1e-9:
        raise RuntimeError(f"rewired series exceeds its product bound by {-gap:.3e}")
    return RewiredReport(value, tuple(orders[: r_max + 1]), pair_product, gap)
