"""Excursions between S and the complement of U, and the sprinkling coupling.

Two separated finite sets S_1, S_2 sit inside balls W_i = B(z_i, L); the
surrounding balls are V_i = B(z_i, 2L) and U_i = B(z_i, 3L). Paths of the
interlacement are cut into excursions from their entrance in S to their
next exit from U. Comparing the single-excursion paths gained between two
levels u_- < u_+ with the returning paths at level u_- is what lets far
apart events decouple.

Everything that can be computed exactly (hitting laws, entrance laws,
Poisson tails) is computed by dynamic programming; sampled quantities are
reported with confidence intervals.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import special
from scipy import stats as sps

from .errors import HypothesisError, ParameterError, UndecidableError
from .lattice import Site, Window, radius, set_distance, unit_vectors
from .potential import (BoxUnion, _neighbor_mean, cached_equilibrium, equilibrium, reflect,
                        sample_forward, walk_distribution)
from .rng import as_generator
from .stats import frequency

E4 = math.exp(4)


# ---------------------------------------------------------------------------
# geometry

@dataclass(frozen=True)
class SprinkleGeometry:
    S1: frozenset
    S2: frozenset
    L: int
    z1: Site
    z2: Site

    @property
    def d(self) -> int:
        return len(self.z1)

    @property
    def S(self) -> frozenset:
        return self.S1 | self.S2

    def ball(self, i: int, k: int) -> Window:
        return Window.ball(self.z1 if i == 1 else self.z2, k * self.L)

    @property
    def W(self) -> BoxUnion:
        return BoxUnion([self.ball(1, 1), self.ball(2, 1)])

    @property
    def V(self) -> BoxUnion:
        return BoxUnion([self.ball(1, 2), self.ball(2, 2)])

    @property
    def U(self) -> BoxUnion:
        return BoxUnion([self.ball(1, 3), self.ball(2, 3)])

    def in_U(self, pts: np.ndarray) -> np.ndarray:
        """Vectorized membership in U for points of shape (..., d)."""
        out = np.zeros(pts.shape[:-1], dtype=bool)
        for z in (self.z1, self.z2):
            out |= np.all(np.abs(pts - np.asarray(z)) <= 3 * self.L, axis=-1)
        return out

    @property
    def U_top(self) -> int:
        return max(self.z1[-1], self.z2[-1]) + 3 * self.L

    @property
    def S_top(self) -> int:
        return max(s[-1] for s in self.S)


def _check_sets(S1, S2):
    S1 = frozenset(tuple(int(c) for c in x) for x in S1)
    S2 = frozenset(tuple(int(c) for c in x) for x in S2)
    if not S1 or not S2:
        raise ParameterError("S_1 and S_2 must be nonempty")
    return S1, S2


def build_geometry(S1: Iterable, S2: Iterable, L: int | None = None) -> SprinkleGeometry:
    """Centers z_1, z_2 with S_i in B(z_i, L) and |z_1 - z_2| > 6L.

    L defaults to the larger radius of S_1, S_2, floored at 1. A larger L
    may be passed; every containment used later only needs S_i in B(z_i, L).
    """
    S1, S2 = _check_sets(S1, S2)
    r = max(radius(S1), radius(S2), 1)
    if L is None:
        L = r
    if L < r:
        raise HypothesisError(f"L={L} is below the radius {r} of the sets")
    dist = set_distance(S1, S2)
    if not dist > 4 * L:
        raise HypothesisError(f"d(S_1, S_2) = {dist} is not > 4L = {4 * L}")
    a, b = np.asarray(sorted(S1)), np.asarray(sorted(S2))
    # z_i ranges over [max S_i - L, min S_i + L] coordinatewise
    lo1, hi1 = a.max(0) - L, a.min(0) + L
    lo2, hi2 = b.max(0) - L, b.min(0) + L
    best = None
    for ax in range(a.shape[1]):
        for sgn in (1, -1):
            gap = (hi2[ax] - lo1[ax]) if sgn > 0 else (hi1[ax] - lo2[ax])
            if best is None or gap > best[0]:
                best = (gap, ax, sgn)
    gap, ax, sgn = best
    if not gap > 6 * L:
        raise HypothesisError(f"no centers with |z_1 - z_2| > 6L = {6 * L} (best {gap}); sets are not axis-separated enough")
    z1 = (lo1 + hi1) // 2
    z2 = (lo2 + hi2) // 2
    if sgn > 0:
        z1[ax], z2[ax] = lo1[ax], hi2[ax]
    else:
        z1[ax], z2[ax] = hi1[ax], lo2[ax]
    g = SprinkleGeometry(S1, S2, int(L), tuple(int(c) for c in z1), tuple(int(c) for c in z2))
    assert all(g.ball(1, 1).contains(x) for x in S1) and all(g.ball(2, 1).contains(x) for x in S2)
    return g


# ---------------------------------------------------------------------------
# excursions

@dataclass(frozen=True)
class ExcursionRecord:
    path: tuple  # sites from X_{R_k} to X_{D_k}
    parent: int
    k: int
    j: int


def decompose(trace: Sequence[Sequence[int]], geom: SprinkleGeometry, parent: int = 0) -> list[ExcursionRecord]:
    """Excursions (X_{R_k}, ..., X_{D_k}) of a time-ordered directed trace.

    The trace must reach above the top level of S after its last exit from
    U, since only then is R_{j+1} = infinity decided.
    """
    pts = np.asarray(trace, dtype=np.int64)
    S = geom.S
    inS = np.fromiter((tuple(p) in S for p in pts.tolist()), dtype=bool, count=len(pts))
    inU = geom.in_U(pts)
    exc = []
    i = 0
    n = len(pts)
    while True:
        nxt = np.flatnonzero(inS[i:])
        if nxt.size == 0:
            break
        r = i + int(nxt[0])
        out = np.flatnonzero(~inU[r:])
        if out.size == 0:
            raise UndecidableError("trace ends inside U during an excursion; extend the truncation")
        dk = r + int(out[0])
        exc.append(tuple(tuple(int(c) for c in p) for p in pts[r:dk + 1]))
        i = dk
    if n and pts[-1, -1] <= geom.S_top:
        # a later entrance into S cannot be ruled out
        raise UndecidableError("trace ends at or below the top level of S; extend the truncation")
    j = len(exc)
    return [ExcursionRecord(w, parent, k + 1, j) for k, w in enumerate(exc)]


def _walk_excursions(geom: SprinkleGeometry, starts: np.ndarray, rng) -> list[tuple]:
    """Upward walks from the given sites until the first exit from U."""
    d = geom.d
    n = len(starts)
    if n == 0:
        return []
    top = geom.U_top + 1
    fw = sample_forward(starts[:, :-1], starts[:, -1], top, d, rng)
    bottom = int(starts[:, -1].min())
    out = []
    lv = np.arange(bottom, top + 1)
    for i in range(n):
        t0 = int(starts[i, -1])
        sp = fw[i, t0 - bottom:]
        pts = np.column_stack([sp, lv[t0 - bottom:]])
        k = int(np.argmax(~geom.in_U(pts)))
        out.append(tuple(tuple(int(c) for c in p) for p in pts[:k + 1]))
    return out


def gamma_sampler(geom: SprinkleGeometry, n: int = 1, seed=None) -> list[tuple]:
    """n i.i.d. excursions with law Gamma: start ~ normalized e_S, upward
    walk up to and including the first site outside U."""
    table = cached_equilibrium(geom.S, geom.d)
    rng = as_generator(seed)
    idx = rng.choice(len(table.sites), size=n, p=table.e_tilde)
    return _walk_excursions(geom, table.sites[idx], rng)


def exit_level_law(geom: SprinkleGeometry) -> dict[int, float]:
    """Exact law of the level of X_{T_U} under Gamma."""
    from .potential import absorb_walk
    table = cached_equilibrium(geom.S, geom.d)
    law: dict[int, float] = {}
    for s, p in zip(table.sites, table.e_tilde):
        if p <= 0:
            continue
        res = absorb_walk(tuple(s), geom.d, +1, target=None, stay=geom.U, n_steps=geom.U_top + 1 - int(s[-1]))
        # the start itself lies in U; exits are recorded from time 1 on
        for z, q in res.exits.items():
            law[z[-1]] = law.get(z[-1], 0.0) + p * q
    return law


# ---------------------------------------------------------------------------
# exact entrance laws on many starting sites

def outer_boundary(region: BoxUnion) -> np.ndarray:
    """l1 outer boundary of a union of boxes, as an (n, d) array."""
    pts = set()
    for b in region.boxes:
        lo, hi = b.lo - 1, b.hi + 1
        d = len(lo)
        for ax in range(d):
            for v in (lo[ax], hi[ax]):
                rng = [np.arange(b.lo[k], b.hi[k] + 1) if k != ax else np.array([v]) for k in range(d)]
                grid = np.stack(np.meshgrid(*rng, indexing="ij"), -1).reshape(-1, d)
                pts.update(map(tuple, grid.tolist()))
    pts = [p for p in pts if p not in region]
    return np.asarray(sorted(pts), dtype=np.int64)


def entrance_on_sites(S: Iterable, d: int, query: np.ndarray, per_site: bool = True, direction: int = +1):
    """P_x(X_{H_S} = y) for each query site x (rows) and y in S (columns),
    or P_x(H_S < inf) when per_site is False, for the walk in `direction`.

    Backward induction over levels, one level array at a time. Outside the
    box fattened by the slab height S is unreachable, so zero padding is
    exact.
    """
    if direction < 0:
        S2 = reflect(S)
        q = np.asarray(query, dtype=np.int64).copy()
        q[:, -1] *= -1
        return entrance_on_sites(S2, d, q, per_site, +1)
    S_arr = np.asarray(sorted({tuple(int(c) for c in x) for x in S}), dtype=np.int64)
    query = np.asarray(query, dtype=np.int64)
    top = int(S_arr[:, -1].max())
    qlo = int(query[:, -1].min()) if len(query) else top
    H = max(top - qlo, 0) + 1
    lo = np.minimum(query[:, :-1].min(0), S_arr[:, :-1].min(0)) - H
    hi = np.maximum(query[:, :-1].max(0), S_arr[:, :-1].max(0)) + H
    shape = tuple(hi - lo + 1)
    targets = list(range(len(S_arr))) if per_site else [None]
    out = np.zeros((len(query), len(targets)))
    by_level = {}
    for i, t in enumerate(query[:, -1]):
        by_level.setdefault(int(t), []).append(i)
    s_by_level = {}
    for k, s in enumerate(S_arr):
        s_by_level.setdefault(int(s[-1]), []).append(k)
    for c, y in enumerate(targets):
        cur = np.zeros(shape)
        for t in range(top, qlo - 1, -1):
            cur = _neighbor_mean(cur, fill=0.0) if t < top else np.zeros(shape)
            for k in s_by_level.get(t, []):
                idx = tuple(S_arr[k, :-1] - lo)
                cur[idx] = 1.0 if (y is None or y == k) else 0.0
            rows = by_level.get(t)
            if rows:
                rel = query[rows, :-1] - lo
                out[rows, c] = cur[tuple(rel.T)]
    # query sites above S cannot reach it
    return out if per_site else out[:, 0]


def green_max_to_set(xs: np.ndarray, zs: np.ndarray, d: int) -> np.ndarray:
    """max_{z in zs} g(x, z) for each x, from exact walk laws per height."""
    xs = np.asarray(xs, dtype=np.int64)
    zs = np.asarray(zs, dtype=np.int64)
    out = np.zeros(len(xs))
    by_level = {}
    for z in zs:
        by_level.setdefault(int(z[-1]), []).append(z[:-1])
    hmax = int(zs[:, -1].max() - xs[:, -1].min())
    laws = {n: walk_distribution(d, n) for n in range(0, max(hmax, 0) + 1)}
    for t, zl in by_level.items():
        zl = np.asarray(zl)
        for i, x in enumerate(xs):
            n = t - int(x[-1])
            if n < 0:
                continue
            off = zl - x[:-1] + n
            ok = np.all((off >= 0) & (off <= 2 * n), axis=1)
            if ok.any():
                out[i] = max(out[i], float(laws[n][tuple(off[ok].T)].max()))
    return out


# ---------------------------------------------------------------------------
# exact checks of the intensity inequalities

@dataclass
class DominationReport:
    L: int
    cap_S: float
    max_hit_dU: float  # max over outer boundary of U of P_x(H_S < inf)
    max_ratio_dU: float  # max over x in outer boundary of U, y in S of P_x(X_{H_S}=y) / e~_S(y)
    max_ratio_dV: float  # same over the outer boundary of V
    min_escape_dV: float  # min over outer boundary of V of P^-_z(H_S = inf)
    chain_ok: bool  # P_x(X_{H_S}=y) <= 2 max_z g(x,z) e_S(y) on the boundary of U
    chain_slack: float
    delta_required: float  # smallest delta for which the domination holds on the boundary of U
    hypothesis_rhs: dict = field(default_factory=dict)  # delta -> delta L^((d-1)/2) / (4 e^4 c_d)

    def domination_holds(self, delta: float) -> bool:
        return self.max_ratio_dU <= delta / (2 * E4) * (1 + 1e-12)


def domination_check(geom: SprinkleGeometry, c_d: float | None = None, deltas=(math.exp(3),),
                     with_chain: bool = True) -> DominationReport:
    d = geom.d
    table = equilibrium(geom.S, d)
    sites = [tuple(int(c) for c in s) for s in table.sites]
    et = table.e_tilde
    dU = outer_boundary(geom.U)
    dV = outer_boundary(geom.V)
    top = geom.S_top
    dU = dU[dU[:, -1] < top]  # sites at or above the top of S never enter it
    law_U = entrance_on_sites(sites, d, dU, per_site=True) if len(dU) else np.zeros((0, len(sites)))
    hit_U = law_U.sum(axis=1)
    ratio_U = (law_U / et[None, :]).max() if len(dU) else 0.0
    dVb = dV[dV[:, -1] < top]
    law_V = entrance_on_sites(sites, d, dVb, per_site=True) if len(dVb) else np.zeros((0, len(sites)))
    ratio_V = (law_V / et[None, :]).max() if len(dVb) else 0.0
    # downward escape from the outer boundary of V
    esc_V = 1.0 - entrance_on_sites(sites, d, dV[dV[:, -1] > min(s[-1] for s in sites)], per_site=False,
                                    direction=-1)
    chain_ok, slack = True, float("inf")
    if with_chain and len(dU):
        gmax = green_max_to_set(dU, dV, d)
        bound = 2 * gmax[:, None] * table.e_values[None, :]
        chain_ok = bool(np.all(law_U <= bound + 1e-12))
        slack = float((bound - law_U).min())
    rhs = {}
    if c_d is not None:
        for delta in deltas:
            rhs[float(delta)] = delta * geom.L ** ((d - 1) / 2) / (4 * E4 * c_d)
    return DominationReport(geom.L, table.cap, float(hit_U.max()) if len(dU) else 0.0, float(ratio_U),
                            float(ratio_V), float(esc_V.min()) if esc_V.size else 1.0, chain_ok, slack,
                            float(2 * E4 * ratio_U), rhs)


def check_hypothesis(geom: SprinkleGeometry, delta: float, c_d: float) -> float:
    """Raise unless d(S_1,S_2) > 4L, cap(S) <= delta L^((d-1)/2)/(4e^4 c_d)
    and delta <= e^3. Returns cap(S)."""
    if delta > math.exp(3):
        raise HypothesisError(f"delta = {delta} > e^3")
    if delta <= 0:
        raise HypothesisError("delta must be positive")
    dist = set_distance(geom.S1, geom.S2)
    if not dist > 4 * geom.L:
        raise HypothesisError(f"d(S_1, S_2) = {dist} is not > 4L")
    cap = equilibrium(geom.S, geom.d).cap
    rhs = delta * geom.L ** ((geom.d - 1) / 2) / (4 * E4 * c_d)
    if cap > rhs:
        raise HypothesisError(f"cap(S) = {cap:.6g} > delta L^((d-1)/2) / (4 e^4 c_d) = {rhs:.6g}")
    return cap


# ---------------------------------------------------------------------------
# sampled intensity inequalities on cylinder events

def _block(site, L):
    return tuple(int(c) // max(L, 1) for c in site)


@dataclass
class IntensityReport:
    events: int
    violations_single: int
    violations_double: int
    rows: list  # per-event dicts
    exact_single_ok: bool
    exact_double_ok: bool


def verify_intensity_bounds(geom: SprinkleGeometry, u_minus: float, delta: float, n: int, seed=None,
                            c_d: float | None = None, block: int | None = None, k: float = 3.0) -> IntensityReport:
    """Both intensity inequalities on the family of (entrance site x exit
    block) cylinders, by Monte Carlo under P^+_{e~_S} with Wilson intervals,
    plus the exact per-site statements behind them."""
    if c_d is not None:
        check_hypothesis(geom, delta, c_d)
    elif delta > math.exp(3):
        raise HypothesisError(f"delta = {delta} > e^3")
    rng = as_generator(seed)
    block = block or geom.L
    r = delta / (2 * E4)
    table = cached_equilibrium(geom.S, geom.d)
    idx = rng.choice(len(table.sites), size=n, p=table.e_tilde)
    starts = table.sites[idx]
    top = max(geom.U_top, geom.S_top) + 1
    fw = sample_forward(starts[:, :-1], starts[:, -1], top, geom.d, rng)
    bottom = int(starts[:, -1].min())

    def key(w):
        return (w[0], _block(w[-1], block))

    single, gamma1, pairs = Counter(), Counter(), Counter()
    gam = []
    for i in range(n):
        t0 = int(starts[i, -1])
        lv = np.arange(t0, top + 1)
        pts = np.column_stack([fw[i, t0 - bottom:], lv])
        recs = decompose(pts, geom, i)
        gamma1[key(recs[0].path)] += 1
        gam.append(key(recs[0].path))
        if len(recs) == 1:
            single[key(recs[0].path)] += 1
        else:
            pairs[(key(recs[0].path), key(recs[1].path))] += 1
    rows, v1, v2 = [], 0, 0
    for e, c in sorted(gamma1.items()):
        a = frequency(single.get(e, 0), n)
        b = frequency(c, n)
        # xi^1 / ((u_+ - u_-) cap) >= Gamma / 2
        bad = a.hi < 0.5 * b.lo and (0.5 * b.estimate - a.estimate) > k * math.hypot(a.sigma, 0.5 * b.sigma)
        v1 += bad
        rows.append({"event": repr(e), "kind": "single", "lhs": a.estimate, "rhs": 0.5 * b.estimate, "violated": bool(bad)})
    for (e1, e2), c in sorted(pairs.items()):
        a = frequency(c, n)
        g1, g2 = gamma1[e1] / n, gamma1[e2] / n
        rhs = r * g1 * g2
        sig = math.sqrt(rhs * (1 - rhs) / n) + r * math.sqrt(g1 * g2 / n)
        bad = (a.estimate - rhs) > k * max(a.sigma, sig)
        v2 += bad
        rows.append({"event": repr((e1, e2)), "kind": "double", "lhs": a.estimate, "rhs": rhs, "violated": bool(bad)})
    rep = domination_check(geom, with_chain=False)
    return IntensityReport(len(rows), v1, v2, rows, rep.max_hit_dU <= 0.5, rep.domination_holds(delta))


# ---------------------------------------------------------------------------
# Poisson tails of the coupling

@dataclass
class TailReport:
    """Probabilities are also kept as natural logs, since for large lam1
    both the tails and their bounds underflow."""

    u_minus: float
    delta: float
    cap_S: float
    lam1: float
    log_p_low: float  # log P(N^1 <= lam1 / 2)
    log_p_high_lo: float  # log P(N_- >= lam1 / 2), certified lower bound
    log_p_high_hi: float  # certified upper bound
    log_bound_each: float  # -lam1/10
    log_bound_total: float  # log 2 - cap (u_+ - u_-)/20
    series: float  # sum_{j>=2} lam^j (e^j - 1)
    series_bound: float  # lam1 / e
    j_max: int
    neglected_mass: float

    @property
    def p_low(self) -> float:
        return math.exp(self.log_p_low)

    @property
    def p_high_lo(self) -> float:
        return math.exp(self.log_p_high_lo)

    @property
    def p_high_hi(self) -> float:
        return math.exp(self.log_p_high_hi)

    @property
    def bound_each(self) -> float:
        return math.exp(self.log_bound_each)

    @property
    def bound_total(self) -> float:
        return math.exp(self.log_bound_total)

    @property
    def checks(self) -> dict:
        tol = 1e-12
        return {
            "low_tail": self.log_p_low <= self.log_bound_each + tol,
            "high_tail": self.log_p_high_hi <= self.log_bound_each + tol,
            "sum": float(np.logaddexp(self.log_p_low, self.log_p_high_hi)) <= self.log_bound_total + tol,
            "series": self.series <= self.series_bound,
        }

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def lambdas(u_minus: float, delta: float, cap_S: float, j_max: int) -> np.ndarray:
    """lam[j] for j = 0..j_max (entries 0 and 1 hold 0 and lam^1)."""
    lam = np.zeros(j_max + 1)
    lam[1] = 0.5 * delta * u_minus * cap_S
    j = np.arange(2, j_max + 1)
    lam[2:] = (delta / (2 * E4)) ** (j - 1) * u_minus * cap_S
    return lam


def _log_compound_tail(lam: np.ndarray, c: int, M: int) -> float:
    """log P(c <= sum_j j N^j <= M), N^j ~ Pois(lam[j]) independent, by the
    Panjer recursion in log space."""
    J = len(lam) - 1
    js = np.arange(1, J + 1)
    with np.errstate(divide="ignore"):
        lw = np.log(js * lam[1:])
    logp = np.full(M + 1, -np.inf)
    logp[0] = -lam[1:].sum()
    for n in range(1, M + 1):
        k = js[js <= n]
        terms = lw[: len(k)] + logp[n - k]
        # plain numpy logsumexp; scipy's call overhead dominates on short arrays
        m = terms.max()
        logp[n] = -np.inf if m == -np.inf else m + math.log(np.exp(terms - m).sum()) - math.log(n)
    if c > M:
        return -np.inf
    return float(special.logsumexp(logp[c:]))


def coupling_tail_check(u_minus: float, delta: float, cap_S: float) -> TailReport:
    if delta > math.exp(3):
        raise HypothesisError(f"delta = {delta} > e^3")
    if u_minus <= 0 or delta <= 0 or cap_S <= 0:
        raise ParameterError("u_-, delta and cap(S) must be positive")
    r = delta / (2 * E4)
    uc = u_minus * cap_S
    log_target = -0.5 * delta * uc / 10
    # cap j where sum_{j > j_max} lam^j is below 1e-9 of the bound being certified
    log_allowed = math.log(1e-9) + log_target + math.log(1 - r) - math.log(r * uc)
    j_max = max(2, 1 + math.ceil(log_allowed / math.log(r)))
    lam = lambdas(u_minus, delta, cap_S, j_max)
    lam1 = float(lam[1])
    log_neglected = (j_max - 1) * math.log(r) + math.log(uc) + math.log(r / (1 - r))
    log_p_low = float(sps.poisson.logcdf(math.floor(lam1 / 2), lam1))
    c = math.ceil(lam1 / 2)
    jump = lam.copy()
    jump[1] = 0.0
    js = np.arange(2, len(lam))
    # sum_j lam^j (e^j - 1); terms shrink like (r e)^j, summed in logs to avoid e^j overflow
    mgf = float(np.exp(special.logsumexp((js - 1) * math.log(r) + math.log(uc) + js + np.log(-np.expm1(-js)))))
    # P(N_- >= M+1) <= exp(mgf - (M+1)) by Markov's inequality on e^{N_-}
    M = max(c, math.ceil(mgf - log_target + 60))
    log_tail = _log_compound_tail(jump, c, M)
    log_hi = float(special.logsumexp([log_tail, mgf - (M + 1), log_neglected]))
    # closed form of sum_{j>=2} lam^j (e^j - 1) with lam^j = r^{j-1} u cap
    series_closed = uc * (r * math.exp(2) / (1 - r * math.e) - r / (1 - r))
    return TailReport(u_minus, delta, cap_S, lam1, log_p_low, log_tail, log_hi, log_target,
                      math.log(2) - cap_S * (delta * u_minus) / 20, series_closed, lam1 / math.e, j_max,
                      math.exp(log_neglected))


# ---------------------------------------------------------------------------
# the explicit coupling, sample-wise inclusion

@dataclass
class InclusionReport:
    samples: int
    event_count: int  # samples with N_- <= N^1
    inclusion_failures: int
    alpha_max: float  # largest thinning probability used (must be <= 1)
    max_excursions: int


def coupling_inclusion_check(geom: SprinkleGeometry, u_minus: float, delta: float, n: int, seed=None) -> InclusionReport:
    """Build the explicit coupling n times: N^1 ~ Pois(lam^1), N^j ~ Pois(lam^j),
    one i.i.d. Gamma sequence, rows of j-tuples thinned with the exact
    probabilities xi^j / (lam^j Gamma^j). Checks, whenever N_- <= N^1, that the
    thinned returning excursions are dominated by the first N^1 excursions
    (the residual process only adds points, so it is not sampled)."""
    rng = as_generator(seed)
    table = cached_equilibrium(geom.S, geom.d)
    cap = table.cap
    et = {tuple(int(c) for c in s): float(p) for s, p in zip(table.sites, table.e_tilde)}
    sites = sorted(et)
    r = delta / (2 * E4)
    j_max = 8
    lam = lambdas(u_minus, delta, cap, j_max)
    cache: dict = {}

    def alpha2(w1, w2):
        # xi^2(w1,w2) / (lam^2 Gamma(w1) Gamma(w2))
        #   = [P_{z1}(X_{H_S} = y2) / e~(y2)] P_{z2}(H_S = inf) / r
        z1, y2, z2 = w1[-1], w2[0], w2[-1]
        if (z1, z2) not in cache:
            q = np.asarray([z1, z2], dtype=np.int64)
            law = entrance_on_sites(sites, geom.d, q, per_site=True)
            cache[(z1, z2)] = (law[0], 1.0 - law[1].sum())
        law1, esc2 = cache[(z1, z2)]
        return law1[sites.index(y2)] / et[y2] * esc2 / r

    fails, events, amax, jm = 0, 0, 0.0, 0
    for _ in range(n):
        N1 = int(rng.poisson(lam[1]))
        Nj = rng.poisson(lam[2:])
        Nminus = int(np.sum(np.arange(2, j_max + 1) * Nj))
        total = max(N1, Nminus)
        gam = _walk_excursions(geom, table.sites[rng.choice(len(sites), size=total, p=table.e_tilde)], rng) if total else []
        kept = Counter()
        pos = 0
        for j, cnt in zip(range(2, j_max + 1), Nj):
            for _ in range(int(cnt)):
                tup = gam[pos:pos + j]
                pos += j
                if j == 2:
                    a = alpha2(*tup)
                else:
                    a = 0.0  # more than two excursions cannot occur in this geometry
                amax = max(amax, a)
                if rng.random() < a:
                    kept.update(tup)
                    jm = max(jm, j)
        if Nminus <= N1:
            events += 1
            first = Counter(gam[:N1])
            if any(kept[w] > first[w] for w in kept):
                fails += 1
    return InclusionReport(n, events, fails, amax, jm)


# ---------------------------------------------------------------------------
# level-coupled soups: zeta processes and decorrelation

@dataclass
class ZetaCounts:
    single_minus: Counter
    single_plus: Counter
    returning_minus: Counter  # excursions of paths with j >= 2 at level u_-
    max_j: int

    @property
    def monotone(self) -> bool:
        return all(self.single_plus[w] >= c for w, c in self.single_minus.items())


def zeta_processes(geom: SprinkleGeometry, u_minus: float, u_plus: float, seed=None) -> ZetaCounts:
    """One soup on S at level u_plus; excursion processes at both levels."""
    if not 0 < u_minus < u_plus:
        raise ParameterError("need 0 < u_- < u_+")
    rng = as_generator(seed)
    table = cached_equilibrium(geom.S, geom.d)
    N = int(rng.poisson(u_plus * table.cap))
    idx = rng.choice(len(table.sites), size=N, p=table.e_tilde)
    starts = table.sites[idx]
    levels = u_plus * (1.0 - rng.random(N))
    top = max(geom.U_top, geom.S_top) + 1
    sm, sp, rm = Counter(), Counter(), Counter()
    mj = 0
    if N:
        fw = sample_forward(starts[:, :-1], starts[:, -1], top, geom.d, rng)
        bottom = int(starts[:, -1].min())
        for i in range(N):
            t0 = int(starts[i, -1])
            pts = np.column_stack([fw[i, t0 - bottom:], np.arange(t0, top + 1)])
            recs = decompose(pts, geom, i)
            mj = max(mj, len(recs))
            if len(recs) == 1:
                sp[recs[0].path] += 1
                if levels[i] <= u_minus:
                    sm[recs[0].path] += 1
            elif levels[i] <= u_minus:
                for rec in recs:
                    rm[rec.path] += 1
    return ZetaCounts(sm, sp, rm, mj)


EVENTS = {
    "covered": ("increasing", lambda occ: occ.all(axis=1)),
    "vacant": ("decreasing", lambda occ: ~occ.any(axis=1)),
    "any-occupied": ("increasing", lambda occ: occ.any(axis=1)),
    "any-vacant": ("decreasing", lambda occ: ~occ.all(axis=1)),
    "full": ("increasing", lambda occ: np.ones(occ.shape[0], dtype=bool)),
}


@dataclass
class DecorrelationReport:
    kind: str
    event1: str
    event2: str
    n: int
    u_minus: float
    u_plus: float
    eps: float
    lhs: float
    p1: float
    p2: float
    rhs: float
    se: float
    slack: float  # rhs + eps - lhs
    slack_no_eps: float

    def passed(self, k: float = 3.0) -> bool:
        return self.slack >= -k * self.se


def _sites(K):
    return sorted({tuple(int(c) for c in x) for x in K})


def decorrelation_occupancy(K1, K2, u_minus: float, u_plus: float, n: int, seed=None,
                            chunk: int = 20000) -> tuple[np.ndarray, np.ndarray]:
    """Occupation of K_1 + K_2 (columns in sorted order) at both levels from
    n level-coupled soups on K = K_1 u K_2."""
    from .interlace import sample_soup
    if not 0 < u_minus < u_plus:
        raise ParameterError("need 0 < u_- < u_+")
    rng = as_generator(seed)
    K = _sites(K1) + _sites(K2)
    d = len(K[0])
    occ_m = np.zeros((n, len(K)), dtype=bool)
    occ_p = np.zeros((n, len(K)), dtype=bool)
    for a in range(0, n, chunk):
        b = min(n, a + chunk)
        soup = sample_soup(K, u_plus, rng, d=d, n_soups=b - a)
        for c, x in enumerate(K):
            occ_m[a:b, c] = soup.site_occupied(x, u_minus)
            occ_p[a:b, c] = soup.site_occupied(x, u_plus)
    return occ_m, occ_p


def decorrelation_report(occ_m: np.ndarray, occ_p: np.ndarray, n1: int, event1: str, event2: str,
                         u_minus: float, u_plus: float, eps: float) -> DecorrelationReport:
    """Both sides of the decorrelation inequality. For increasing events the
    left side is at u_- and the right at u_+; for decreasing events the
    roles swap."""
    if event1 not in EVENTS or event2 not in EVENTS:
        raise ParameterError(f"events must be among {sorted(EVENTS)}")
    kind1, f1 = EVENTS[event1]
    kind2, f2 = EVENTS[event2]
    if kind1 != kind2 and "full" not in (event1, event2):
        raise ParameterError("both events must be increasing or both decreasing")
    if event1 == "full":
        kind1 = kind2
    n = len(occ_m)
    lo_occ, hi_occ = (occ_m, occ_p) if kind1 == "increasing" else (occ_p, occ_m)
    both = f1(lo_occ[:, :n1]) & f2(lo_occ[:, n1:])
    a1, a2 = f1(hi_occ[:, :n1]), f2(hi_occ[:, n1:])
    lhs, p1, p2 = both.mean(), a1.mean(), a2.mean()
    rhs = p1 * p2
    # delta method for rhs - lhs with all three estimated from the same replicas
    g = both.astype(float) - p2 * a1 - p1 * a2
    se = float(g.std(ddof=1) / math.sqrt(n)) if n > 1 else float("inf")
    return DecorrelationReport(kind1, event1, event2, n, u_minus, u_plus, eps, float(lhs), float(p1), float(p2),
                               float(rhs), se, float(rhs + eps - lhs), float(rhs - lhs))


def decorrelation_eps(geom: SprinkleGeometry, u_minus: float, u_plus: float) -> float:
    """2 exp(-cap(S)(u_+ - u_-)/20)."""
    cap_S = cached_equilibrium(geom.S, geom.d).cap
    return 2 * math.exp(-cap_S * (u_plus - u_minus) / 20)


def decorrelation_experiment(K1, K2, event1: str, event2: str, u_minus: float, u_plus: float, n: int, seed=None,
                             eps: float | None = None, geom: SprinkleGeometry | None = None,
                             chunk: int = 20000) -> DecorrelationReport:
    """Estimate both sides of the decorrelation inequality from level-coupled
    soups on K = K_1 u K_2; events are monotone functions of the occupation
    of K_i. eps defaults to 2 exp(-cap(S)(u_+ - u_-)/20) with S from `geom`."""
    if event1 not in EVENTS or event2 not in EVENTS:
        raise ParameterError(f"events must be among {sorted(EVENTS)}")
    K1, K2 = _sites(K1), _sites(K2)
    if geom is not None and (not set(K1) <= geom.S1 or not set(K2) <= geom.S2):
        raise ParameterError("K_i must be contained in S_i")
    if eps is None:
        if geom is None:
            raise ParameterError("need eps or a geometry to derive it")
        eps = decorrelation_eps(geom, u_minus, u_plus)
    occ_m, occ_p = decorrelation_occupancy(K1, K2, u_minus, u_plus, n, seed, chunk)
    return decorrelation_report(occ_m, occ_p, len(K1), event1, event2, u_minus, u_plus, eps)
