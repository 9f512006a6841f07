"""Potential theory for the directed walks on Z^d, d >= 3.

The upward walk jumps by (a, 1) with |a|_1 = 1, each with probability
1/(2(d-1)); the downward walk uses the negated jumps. Because the vertical
coordinate moves by exactly one per step, every quantity here (Green
function, escape probabilities, hitting laws) is a finite level-by-level
dynamic program and can be computed exactly up to float rounding.

Arrays over a spatial box are indexed by the first d-1 coordinates; the
vertical coordinate is handled by iterating over levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy import stats as sps

from .errors import DimensionError, UnsamplableError
from .lattice import Site, Window, unit_vectors
from .rng import as_generator


def _check_d(d: int) -> None:
    if d < 3:
        raise DimensionError(f"directed walks need d >= 3, got d={d}")


def _as_sites(K: Iterable[Sequence[int]]) -> np.ndarray:
    arr = np.asarray(sorted({tuple(int(c) for c in x) for x in K}), dtype=np.int64)
    if arr.size == 0:
        raise ValueError("empty set")
    return arr


# ---------------------------------------------------------------------------
# Green function

def _count_1d(k: int, delta: int) -> int:
    if abs(delta) > k or (k + delta) % 2:
        return 0
    return math.comb(k, (k + delta) // 2)


@lru_cache(maxsize=4096)
def _walk_count(m: int, n: int, delta: tuple[int, ...]) -> int:
    """Number of n-step walks in Z^m with +-unit steps from 0 to delta."""
    if sum(abs(c) for c in delta) > n or (n - sum(abs(c) for c in delta)) % 2:
        return 0
    if m == 2:
        a, b = delta
        return _count_1d(n, a + b) * _count_1d(n, a - b)
    # exponential generating functions multiply across axes
    poly = [Fraction(0)] * (n + 1)
    poly[0] = Fraction(1)
    for c in delta:
        axis = [Fraction(_count_1d(k, c), math.factorial(k)) for k in range(n + 1)]
        new = [Fraction(0)] * (n + 1)
        for i, pi in enumerate(poly):
            if pi:
                for j in range(n + 1 - i):
                    if axis[j]:
                        new[i + j] += pi * axis[j]
        poly = new
    count = poly[n] * math.factorial(n)
    assert count.denominator == 1
    return int(count)


def green_exact(x: Sequence[int], y: Sequence[int], d: int) -> Fraction:
    """g(x, y) = P_x^+(H_y < inf) as an exact fraction."""
    _check_d(d)
    x, y = tuple(x), tuple(y)
    n = y[-1] - x[-1]
    if n < 0:
        return Fraction(0)
    delta = tuple(b - a for a, b in zip(x[:-1], y[:-1]))
    return Fraction(_walk_count(d - 1, n, delta), (2 * (d - 1)) ** n)


def green(x: Sequence[int], y: Sequence[int], d: int) -> float:
    return float(green_exact(x, y, d))


def walk_distribution(d: int, n: int) -> np.ndarray:
    """Law of the spatial displacement after n upward steps, on [-n, n]^(d-1)."""
    _check_d(d)
    m = d - 1
    p = np.zeros((2 * n + 1,) * m)
    p[(n,) * m] = 1.0
    for _ in range(n):
        p = _neighbor_mean(p, fill=0.0)
    return p


def _binomial_center_max(n: int) -> tuple[float, int]:
    """max_k of the law of a +-1 walk after n steps, and its argmax offset."""
    k = np.arange(n + 1)
    pmf = sps.binom.pmf(k, n, 0.5)
    i = int(np.argmax(pmf))
    return float(pmf[i]), 2 * i - n


@dataclass
class LCLTReport:
    d: int
    max_height: int
    estimate: float
    running: np.ndarray  # running[n-1] = max over heights <= n
    per_height: np.ndarray  # per_height[n-1] = n^((d-1)/2) * max_offset g
    central: bool  # the max over offsets sat at the central offset for every n


def lclt_constant(d: int, max_height: int) -> LCLTReport:
    """Numerical sup of g(x, y) (y_d - x_d)^((d-1)/2) over heights <= max_height."""
    _check_d(d)
    if max_height < 1:
        raise ValueError("max_height must be >= 1")
    vals = np.empty(max_height)
    central = True
    for n in range(1, max_height + 1):
        if d == 3:
            # rotated coordinates split the planar walk into two independent
            # +-1 walks, so the 2-d law is an outer product of binomials
            pmax, off = _binomial_center_max(n)
            central &= abs(off) <= 1
            gmax = pmax * pmax
        else:
            p = walk_distribution(d, n)
            idx = np.unravel_index(int(np.argmax(p)), p.shape)
            central &= sum(abs(i - n) for i in idx) <= 1
            gmax = float(p.max())
        vals[n - 1] = gmax * n ** ((d - 1) / 2)
    running = np.maximum.accumulate(vals)
    return LCLTReport(d, max_height, float(running[-1]), running, vals, bool(central))


# ---------------------------------------------------------------------------
# level-by-level machinery

def _neighbor_mean(p: np.ndarray, fill: float) -> np.ndarray:
    """Mean of p over the 2m unit shifts, with `fill` outside the array."""
    m = p.ndim
    q = np.pad(p, 1, constant_values=fill)
    out = np.zeros_like(p)
    core = [slice(1, -1)] * m
    for ax in range(m):
        for s in (0, 2):
            sl = list(core)
            sl[ax] = slice(s, s + p.shape[ax])
            out += q[tuple(sl)]
    out /= 2 * m
    return out


@dataclass
class PotentialTable:
    """Escape probabilities and equilibrium measure of a finite set K.

    For direction=-1 (the default), h[t - t_lo] holds P_z^-(H_K = inf) for z at
    level t on the fattened spatial box starting at h_origin; below t_lo and
    outside the box it equals 1. e[t - t_lo] is e_K over K's bounding box.
    direction=+1 is the mirror statement for the upward walk, with h = 1
    above t_hi.
    """

    d: int
    direction: int
    t_lo: int
    t_hi: int
    k_origin: np.ndarray
    k_mask: np.ndarray
    h_origin: np.ndarray
    h: np.ndarray
    e: np.ndarray
    cap: float
    sites: np.ndarray = field(repr=False)
    e_values: np.ndarray = field(repr=False)

    @property
    def e_tilde(self) -> np.ndarray:
        return self.e_values / self.cap

    @property
    def K(self) -> set[Site]:
        return {tuple(int(c) for c in s) for s in self.sites}

    def e_K(self, x: Sequence[int]) -> float:
        x = np.asarray(x)
        i = x[:-1] - self.k_origin
        lvl = int(x[-1]) - self.t_lo
        if lvl < 0 or lvl > self.t_hi - self.t_lo or np.any(i < 0) or np.any(i >= self.k_mask.shape[1:]):
            return 0.0
        return float(self.e[(lvl, *i)])

    def equilibrium_measure(self) -> dict[Site, float]:
        return {tuple(int(c) for c in s): float(v) for s, v in zip(self.sites, self.e_values)}

    def normalized_measure(self) -> dict[Site, float]:
        return {tuple(int(c) for c in s): float(v) for s, v in zip(self.sites, self.e_tilde)}

    def escape(self, z: Sequence[int]) -> float:
        """h at a single site (P_z^-(H_K = inf) for a downward table)."""
        z = np.asarray(z, dtype=np.int64)
        return float(self.h_at(z[None, :-1], int(z[-1]))[0])

    def h_at(self, spatial: np.ndarray, t: int) -> np.ndarray:
        """Vectorized h lookup at level t for spatial points of shape (..., d-1)."""
        spatial = np.asarray(spatial)
        out_shape = spatial.shape[:-1]
        if (self.direction < 0 and t < self.t_lo) or (self.direction > 0 and t > self.t_hi):
            return np.ones(out_shape)
        if t < self.t_lo or t > self.t_hi:
            raise ValueError(f"level {t} is on the uncomputed side of the slab")
        rel = spatial - self.h_origin
        shape = np.asarray(self.h.shape[1:])
        ok = np.all((rel >= 0) & (rel < shape), axis=-1)
        out = np.ones(out_shape)
        if ok.any():
            idx = tuple(rel[ok].T)
            out[ok] = self.h[t - self.t_lo][idx]
        return out


def _mask_from_sites(sites: np.ndarray):
    t_lo, t_hi = int(sites[:, -1].min()), int(sites[:, -1].max())
    k_origin = sites[:, :-1].min(axis=0)
    kshape = sites[:, :-1].max(axis=0) - k_origin + 1
    mask = np.zeros((t_hi - t_lo + 1, *kshape), dtype=bool)
    rel = sites[:, :-1] - k_origin
    mask[(sites[:, -1] - t_lo, *rel.T)] = True
    return t_lo, t_hi, k_origin, mask


def _escape_dp(t_lo, t_hi, k_origin, mask, d, direction) -> PotentialTable:
    H = t_hi - t_lo
    pad = H + 1
    kshape = np.asarray(mask.shape[1:])
    h_origin = k_origin - pad
    hshape = tuple(kshape + 2 * pad)
    h = np.empty((H + 1, *hshape))
    e = np.zeros(mask.shape)
    inner = tuple(slice(pad, pad + s) for s in kshape)
    prev = np.ones(hshape)
    # Outside the fattened box no site of K is reachable from any level in
    # the slab, so h = 1 there and padding with 1 keeps the DP exact.
    order = range(H + 1) if direction < 0 else range(H, -1, -1)
    for lvl in order:
        avg = _neighbor_mean(prev, fill=1.0)
        sub = avg[inner]
        m = mask[lvl]
        e[lvl][m] = sub[m]
        sub[m] = 0.0
        h[lvl] = avg
        prev = avg
    idx = np.argwhere(mask)
    sites = np.column_stack([idx[:, 1:] + k_origin, idx[:, 0] + t_lo]).astype(np.int64)
    order_lex = np.lexsort(sites.T[::-1])
    sites = sites[order_lex]
    idx = idx[order_lex]
    e_values = e[tuple(idx.T)]
    cap = math.fsum(e_values.tolist())
    return PotentialTable(d, direction, t_lo, t_hi, k_origin, mask, h_origin, h, e, cap, sites, e_values)


def equilibrium(K: Iterable[Sequence[int]], d: int | None = None, direction: int = -1) -> PotentialTable:
    """Equilibrium measure and capacity of a finite K.

    direction=-1 gives e_K(x) = P_x^-(H~_K = inf) 1_K(x), the defining one;
    direction=+1 gives the upward analogue P_x^+(H~_K = inf).
    """
    sites = _as_sites(K)
    d = sites.shape[1] if d is None else d
    _check_d(d)
    if sites.shape[1] != d:
        raise DimensionError(f"sites have dimension {sites.shape[1]}, expected {d}")
    return _escape_dp(*_mask_from_sites(sites), d, direction)


def equilibrium_box(window: Window, direction: int = -1) -> PotentialTable:
    d = window.dim
    _check_d(d)
    lo, hi = window.lo, window.hi
    mask = np.ones((hi[-1] - lo[-1] + 1, *(hi[:-1] - lo[:-1] + 1)), dtype=bool)
    return _escape_dp(int(lo[-1]), int(hi[-1]), lo[:-1].astype(np.int64), mask, d, direction)


_TABLE_CACHE: dict = {}


def cached_equilibrium(K, d: int | None = None, direction: int = -1) -> PotentialTable:
    if isinstance(K, Window):
        key = ("box", K.center, K.radii, direction)
        if key not in _TABLE_CACHE:
            _TABLE_CACHE[key] = equilibrium_box(K, direction)
        return _TABLE_CACHE[key]
    key = ("set", frozenset(tuple(int(c) for c in x) for x in K), d, direction)
    if key not in _TABLE_CACHE:
        _TABLE_CACHE[key] = equilibrium(key[1], d, direction)
    return _TABLE_CACHE[key]


def capacity(K, d: int | None = None) -> float:
    return cached_equilibrium(K, d).cap


def reflect(K: Iterable[Sequence[int]]) -> set[Site]:
    """Time reflection (x_1, ..., x_{d-1}, -x_d)."""
    return {tuple(x[:-1]) + (-x[-1],) for x in (tuple(int(c) for c in y) for y in K)}


def reflect_capacity_check(K: Iterable[Sequence[int]], d: int | None = None) -> tuple[float, float, float]:
    """(cap K, cap of the reflected K, sum_x P_x^+(H~_K = inf)) by three DPs."""
    K = {tuple(int(c) for c in x) for x in K}
    a = equilibrium(K, d, direction=-1).cap
    b = equilibrium(reflect(K), d, direction=-1).cap
    c = equilibrium(K, d, direction=+1).cap
    return a, b, c


# ---------------------------------------------------------------------------
# regions and absorbing walks

class Region:
    """A finite set of sites that can be rasterized level by level."""

    def mask(self, t: int, origin: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
        raise NotImplementedError

    def levels(self) -> tuple[int, int]:
        raise NotImplementedError

    def spatial_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError


class SiteSet(Region):
    def __init__(self, sites: Iterable[Sequence[int]]):
        self.sites = _as_sites(sites)
        self._by_level: dict[int, np.ndarray] = {}
        for t in np.unique(self.sites[:, -1]):
            self._by_level[int(t)] = self.sites[self.sites[:, -1] == t, :-1]

    def __contains__(self, x) -> bool:
        x = tuple(int(c) for c in x)
        pts = self._by_level.get(x[-1])
        return pts is not None and bool(np.any(np.all(pts == np.asarray(x[:-1]), axis=1)))

    def mask(self, t, origin, shape):
        m = np.zeros(shape, dtype=bool)
        pts = self._by_level.get(int(t))
        if pts is not None:
            rel = pts - origin
            ok = np.all((rel >= 0) & (rel < np.asarray(shape)), axis=1)
            m[tuple(rel[ok].T)] = True
        return m

    def levels(self):
        return int(self.sites[:, -1].min()), int(self.sites[:, -1].max())

    def spatial_bounds(self):
        return self.sites[:, :-1].min(axis=0), self.sites[:, :-1].max(axis=0)


class BoxUnion(Region):
    def __init__(self, boxes: Iterable[Window]):
        self.boxes = list(boxes)

    def __contains__(self, x) -> bool:
        return any(b.contains(x) for b in self.boxes)

    def mask(self, t, origin, shape):
        m = np.zeros(shape, dtype=bool)
        for b in self.boxes:
            if abs(t - b.center[-1]) > b.radii[-1]:
                continue
            lo = b.lo[:-1] - origin
            hi = b.hi[:-1] - origin + 1
            lo = np.clip(lo, 0, shape)
            hi = np.clip(hi, 0, shape)
            if np.all(hi > lo):
                m[tuple(slice(a, c) for a, c in zip(lo, hi))] = True
        return m

    def levels(self):
        return min(int(b.lo[-1]) for b in self.boxes), max(int(b.hi[-1]) for b in self.boxes)

    def spatial_bounds(self):
        return (np.min([b.lo[:-1] for b in self.boxes], axis=0),
                np.max([b.hi[:-1] for b in self.boxes], axis=0))

    def outer_boundary(self) -> set[Site]:
        out = set()
        for b in self.boxes:
            for y in b.enlarge(1).sites():
                if not b.contains(y) and y not in self:
                    out.add(tuple(y))
        return out


def as_region(A) -> Region:
    if isinstance(A, Region):
        return A
    if isinstance(A, Window):
        return BoxUnion([A])
    return SiteSet(A)


@dataclass
class AbsorptionResult:
    hits: dict[Site, float]   # mass absorbed in the target set
    exits: dict[Site, float]  # mass killed on first leaving the stay region
    leftover: float
    level_mass: list[float]   # total mass (alive + absorbed) after each step


def absorb_walk(x: Sequence[int], d: int, direction: int, target=None, stay=None,
                n_steps: int | None = None) -> AbsorptionResult:
    """Run the law of the directed walk from x, absorbing on entering `target`
    (at times n >= 1) and killing on leaving `stay` (times n >= 1).

    With target = S and stay = V this gives P_x(X_{H~_{S cup V^c}} = .) split
    into S-entries and exits.
    """
    _check_d(d)
    x = np.asarray(x, dtype=np.int64)
    target = as_region(target) if target is not None else None
    stay = as_region(stay) if stay is not None else None
    if n_steps is None:
        bounds = []
        for R in (target, stay):
            if R is not None:
                lo, hi = R.levels()
                bounds.append(hi - x[-1] + 1 if direction > 0 else x[-1] - lo + 1)
        if not bounds:
            raise ValueError("need n_steps when neither target nor stay is given")
        n_steps = max(0, max(bounds) if stay is not None else min(bounds))
        if stay is None:
            n_steps = max(bounds)
    m = d - 1
    origin = x[:-1] - n_steps
    shape = (2 * n_steps + 1,) * m
    mass = np.zeros(shape)
    mass[(n_steps,) * m] = 1.0
    hits: dict[Site, float] = {}
    exits: dict[Site, float] = {}
    absorbed = 0.0
    level_mass = []
    for k in range(1, n_steps + 1):
        # exact redistribution: each unit shift gets 1/(2m) of the mass
        mass = _neighbor_mean(mass, fill=0.0)
        t = int(x[-1] + direction * k)
        if target is not None:
            tm = target.mask(t, origin, shape) & (mass > 0)
            for idx in np.argwhere(tm):
                s = tuple(int(c) for c in idx + origin) + (t,)
                hits[s] = hits.get(s, 0.0) + float(mass[tuple(idx)])
            absorbed += float(mass[tm].sum())
            mass[tm] = 0.0
        if stay is not None:
            out = ~stay.mask(t, origin, shape) & (mass > 0)
            for idx in np.argwhere(out):
                s = tuple(int(c) for c in idx + origin) + (t,)
                exits[s] = exits.get(s, 0.0) + float(mass[tuple(idx)])
            absorbed += float(mass[out].sum())
            mass[out] = 0.0
        level_mass.append(absorbed + float(mass.sum()))
    return AbsorptionResult(hits, exits, float(mass.sum()), level_mass)


def hitting_law(x: Sequence[int], S, d: int, U=None) -> tuple[dict[Site, float], float]:
    """Law of the entrance point X_{H_S} of the upward walk from x not in S.

    With U given, only paths that stay in U before entering S count, i.e. the
    S-part of the law of X_{H~_{S cup U^c}}. Returns (law, total mass).
    """
    S = as_region(S)
    x = tuple(int(c) for c in x)
    if x in S:
        raise ValueError("hitting_law needs x outside S")
    lo, hi = S.levels()
    if hi <= x[-1]:
        return {}, 0.0
    res = absorb_walk(x, d, +1, target=S, stay=U, n_steps=hi - x[-1])
    return res.hits, math.fsum(res.hits.values())


def hit_probability_last_exit(x: Sequence[int], S: Iterable[Sequence[int]], d: int) -> float:
    """P_x^+(H_S < inf) = sum_y g(x, y) P_y^+(H~_S = inf), the last-exit form."""
    S = {tuple(int(c) for c in y) for y in S}
    up = equilibrium(S, d, direction=+1).equilibrium_measure()
    return math.fsum(green(x, y, d) * up[y] for y in S)


def entrance_fields(S: Iterable[Sequence[int]], d: int, lo_level: int, spatial_lo, spatial_hi,
                    per_site: bool = False):
    """P_x^+(H_S < inf) (or P_x^+(X_{H_S} = y) for every y when per_site) for
    all x at levels lo_level..top(S) over a spatial box.

    Returns (origin, fields) where fields has shape (levels, *box) or
    (|S|, levels, *box); level index 0 is lo_level.
    """
    _check_d(d)
    S_arr = _as_sites(S)
    top = int(S_arr[:, -1].max())
    H = top - lo_level + 1
    lo = np.minimum(np.asarray(spatial_lo), S_arr[:, :-1].min(0)) - H
    hi = np.maximum(np.asarray(spatial_hi), S_arr[:, :-1].max(0)) + H
    shape = tuple(hi - lo + 1)
    region = SiteSet(S_arr)
    targets = [None] if not per_site else [tuple(s) for s in S_arr]
    out = []
    for y in targets:
        f = np.empty((top - lo_level + 1, *shape))
        nxt = np.zeros(shape)
        for t in range(top, lo_level - 1, -1):
            cur = _neighbor_mean(nxt, fill=0.0) if t < top else np.zeros(shape)
            m = region.mask(t, lo, shape)
            if y is None:
                cur[m] = 1.0
            else:
                cur[m] = 0.0
                if y[-1] == t:
                    cur[tuple(np.asarray(y[:-1]) - lo)] = 1.0
            f[t - lo_level] = cur
            nxt = cur
        out.append(f)
    # outside the fattened box S is unreachable, so zero padding is exact
    bx = (np.asarray(spatial_lo) - lo, np.asarray(spatial_hi) - lo + 1)
    crop = tuple(slice(a, b) for a, b in zip(*bx))
    if per_site:
        return np.asarray(spatial_lo), np.stack([f[(slice(None), *crop)] for f in out]), [tuple(s) for s in S_arr]
    return np.asarray(spatial_lo), out[0][(slice(None), *crop)]


# ---------------------------------------------------------------------------
# samplers

def sample_backward(table: PotentialTable, start: np.ndarray, start_t: np.ndarray, stop_level: int,
                    rng: np.random.Generator) -> np.ndarray:
    """Downward walks from `start` conditioned on never returning to K.

    Doob transform: from y the next site z = y - (a, 1) is chosen with
    probability proportional to h(z). Returns positions of shape
    (n, top - stop_level + 1, d-1) indexed by level - stop_level; entries
    above a path's own start level are meaningless.
    """
    if table.direction != -1:
        raise ValueError("backward sampling needs a downward table")
    m = table.d - 1
    units = np.asarray(unit_vectors(m), dtype=np.int64)
    start = np.asarray(start, dtype=np.int64).reshape(-1, m)
    start_t = np.asarray(start_t, dtype=np.int64).reshape(-1)
    n = len(start_t)
    top = int(start_t.max()) if n else stop_level
    out = np.zeros((n, top - stop_level + 1, m), dtype=np.int64)
    if n == 0:
        return out
    cur = start.copy()
    rel = start_t - stop_level
    out[np.arange(n), rel] = start
    for t in range(top, stop_level, -1):
        act = np.flatnonzero(start_t >= t)
        cand = cur[act, None, :] + units[None, :, :]
        w = table.h_at(cand, t - 1)
        cum = np.cumsum(w, axis=1)
        r = (1.0 - rng.random(len(act))) * cum[:, -1]
        if np.any(cum[:, -1] <= 0):
            raise UnsamplableError("conditioned walk reached a site with zero escape probability")
        choice = (cum < r[:, None]).sum(axis=1)
        cur[act] = cand[np.arange(len(act)), choice]
        out[act, t - 1 - stop_level] = cur[act]
    return out


def sample_forward(start: np.ndarray, start_t: np.ndarray, stop_level: int, d: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Free upward walks; positions (n, stop_level - bottom + 1, d-1) indexed
    by level - min(start_t); entries below a path's start are meaningless."""
    m = d - 1
    units = np.asarray(unit_vectors(m), dtype=np.int64)
    start = np.asarray(start, dtype=np.int64).reshape(-1, m)
    start_t = np.asarray(start_t, dtype=np.int64).reshape(-1)
    n = len(start_t)
    bottom = int(start_t.min()) if n else stop_level
    out = np.zeros((n, stop_level - bottom + 1, m), dtype=np.int64)
    if n == 0:
        return out
    cur = start.copy()
    out[np.arange(n), start_t - bottom] = start
    for t in range(bottom, stop_level):
        act = np.flatnonzero(start_t <= t)
        cur[act] += units[rng.integers(0, 2 * m, size=len(act))]
        out[act, t + 1 - bottom] = cur[act]
    return out


def conditioned_backward_sampler(x: Sequence[int], K, stop_level: int, seed=None, d: int | None = None) -> list[Site]:
    """One downward path from x in K conditioned on H~_K = inf, down to stop_level."""
    table = cached_equilibrium(K, d)
    x = tuple(int(c) for c in x)
    if table.e_K(x) <= 0:
        raise UnsamplableError(f"e_K({x}) = 0, conditioning event has probability zero")
    rng = as_generator(seed)
    pos = sample_backward(table, np.asarray([x[:-1]]), np.asarray([x[-1]]), stop_level, rng)[0]
    return [tuple(int(c) for c in pos[t - stop_level]) + (t,) for t in range(x[-1], stop_level - 1, -1)]


def first_step_law(x: Sequence[int], K, d: int | None = None) -> dict[Site, float]:
    """Exact law of the first step of the conditioned downward walk from x."""
    table = cached_equilibrium(K, d)
    m = table.d - 1
    x = tuple(int(c) for c in x)
    units = np.asarray(unit_vectors(m), dtype=np.int64)
    cand = np.asarray(x[:-1]) + units
    w = table.h_at(cand, x[-1] - 1)
    if w.sum() <= 0:
        raise UnsamplableError(f"e_K({x}) = 0")
    w = w / w.sum()
    return {tuple(int(c) for c in s) + (x[-1] - 1,): float(p) for s, p in zip(cand, w)}
