"""Directed random interlacements restricted to a finite set.

A soup on K is a Poisson number of doubly infinite directed paths, each
anchored at its entrance point in K. The anchor is drawn from the
normalized equilibrium measure; the past is a downward walk conditioned to
avoid K (Doob transform) and the future is a free upward walk. Every path
also carries a uniform level in (0, u_max]. The interlacement at level u is
the union of the paths with level <= u.

Paths are stored between one level below K and one level above K. Directed
walks never revisit a level, so this is the whole trace inside K's slab.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .lattice import Site, Window
from .potential import PotentialTable, cached_equilibrium, sample_backward, sample_forward
from .rng import as_generator
from .stats import frequency, homogeneity_test, total_variation, two_proportion_z, normalize
from . import trap_env


@dataclass
class PathSample:
    level: float
    anchor: Site
    backward: list  # anchor first, then downwards
    forward: list  # anchor first, then upwards

    @property
    def trace(self) -> list:
        return self.backward[::-1] + self.forward[1:]


@dataclass
class Soup:
    """One or many independent soups on the same K (batched by soup_index)."""

    table: PotentialTable
    u_max: float
    levels: np.ndarray  # (N,)
    anchor_t: np.ndarray  # (N,)
    traces: np.ndarray  # (N, L, d-1) spatial position at level lo_level + j
    lo_level: int
    soup_index: np.ndarray  # (N,)
    n_soups: int
    box: Window | None = None

    @property
    def d(self) -> int:
        return self.table.d

    @property
    def n_paths(self) -> int:
        return len(self.levels)

    def path(self, i: int) -> PathSample:
        t0 = int(self.anchor_t[i])
        rows = [tuple(int(c) for c in self.traces[i, t - self.lo_level]) + (t,)
                for t in range(self.lo_level, self.lo_level + self.traces.shape[1])]
        k = t0 - self.lo_level
        return PathSample(float(self.levels[i]), rows[k], rows[: k + 1][::-1], rows[k:])

    def select(self, j: int) -> "Soup":
        m = self.soup_index == j
        return Soup(self.table, self.u_max, self.levels[m], self.anchor_t[m], self.traces[m], self.lo_level,
                    np.zeros(int(m.sum()), dtype=np.int64), 1, self.box)

    def _check_u(self, u):
        if u < 0 or u > self.u_max:
            raise ParameterError(f"level {u} outside [0, u_max={self.u_max}]")

    def hits_box(self, box: Window) -> np.ndarray:
        """Per path: does the trace meet the box?"""
        lo, hi = box.lo, box.hi
        a = max(int(lo[-1]), self.lo_level)
        b = min(int(hi[-1]), self.lo_level + self.traces.shape[1] - 1)
        if a > b:
            return np.zeros(self.n_paths, dtype=bool)
        tr = self.traces[:, a - self.lo_level: b - self.lo_level + 1]
        inside = np.all((tr >= lo[:-1]) & (tr <= hi[:-1]), axis=2)
        return inside.any(axis=1)

    def hits_site(self, x) -> np.ndarray:
        x = np.asarray(x)
        j = int(x[-1]) - self.lo_level
        if not 0 <= j < self.traces.shape[1]:
            return np.zeros(self.n_paths, dtype=bool)
        return np.all(self.traces[:, j] == x[:-1], axis=1)

    def box_vacant(self, box: Window, u: float) -> np.ndarray:
        """Per soup: is the box disjoint from I^u?"""
        self._check_u(u)
        m = self.hits_box(box) & (self.levels <= u)
        return np.bincount(self.soup_index[m], minlength=self.n_soups) == 0

    def count_through(self, box: Window, u: float) -> np.ndarray:
        """Per soup: number of paths of level <= u meeting the box."""
        self._check_u(u)
        m = self.hits_box(box) & (self.levels <= u)
        return np.bincount(self.soup_index[m], minlength=self.n_soups)

    def site_occupied(self, x, u: float) -> np.ndarray:
        self._check_u(u)
        m = self.hits_site(x) & (self.levels <= u)
        return np.bincount(self.soup_index[m], minlength=self.n_soups) > 0


def sample_soup(K, u_max: float, seed=None, d: int | None = None, n_soups: int = 1) -> Soup:
    """Sample n_soups independent soups on K (a Window or a finite site set)."""
    if u_max <= 0:
        raise ParameterError(f"u_max must be positive, got {u_max}")
    table = cached_equilibrium(K, d)
    assert table.cap >= 1.0 - 1e-12, "capacity of a nonempty set is at least 1"
    rng = as_generator(seed)
    counts = rng.poisson(u_max * table.cap, size=n_soups)
    N = int(counts.sum())
    soup_index = np.repeat(np.arange(n_soups), counts)
    idx = rng.choice(len(table.sites), size=N, p=table.e_tilde) if N else np.zeros(0, dtype=np.int64)
    levels = u_max * (1.0 - rng.random(N))
    anchors = table.sites[idx]
    lo, hi = table.t_lo - 1, table.t_hi + 1
    m = table.d - 1
    L = hi - lo + 1
    traces = np.zeros((N, L, m), dtype=np.int64)
    if N:
        back = sample_backward(table, anchors[:, :-1], anchors[:, -1], lo, rng)
        fwd = sample_forward(anchors[:, :-1], anchors[:, -1], hi, table.d, rng)
        lv = np.arange(lo, hi + 1)
        # backward part is indexed from lo, forward part from the lowest anchor
        b_ok = lv[None, :] <= anchors[:, -1:]
        traces[:, : back.shape[1]][b_ok[:, : back.shape[1]]] = back[b_ok[:, : back.shape[1]]]
        f0 = int(anchors[:, -1].min())
        f_ok = lv[None, :] > anchors[:, -1:]
        fpart = np.zeros_like(traces)
        fpart[:, f0 - lo:] = fwd
        traces[f_ok] = fpart[f_ok]
    box = K if isinstance(K, Window) else None
    return Soup(table, float(u_max), levels, anchors[:, -1].copy(), traces, lo, soup_index, n_soups, box)


def vacant(soup: Soup, u: float, box: Window | None = None) -> np.ndarray:
    """Vacancy grid of V^u over the box (default: the soup's own window),
    with axes ordered (x_1, ..., x_{d-1}, t). Single soups only."""
    soup._check_u(u)
    if soup.n_soups != 1:
        raise ParameterError("vacant() works on a single soup; use select(j)")
    box = box or soup.box
    if box is None:
        t = soup.table
        lo = np.append(t.k_origin, t.t_lo)
        hi = np.append(t.k_origin + np.asarray(t.k_mask.shape[1:]) - 1, t.t_hi)
        box = Window.from_bounds(lo, hi) if np.all((hi - lo) % 2 == 0) else Window.from_bounds(lo, hi + (hi - lo) % 2)
    grid = np.ones(box.shape, dtype=bool)
    sel = soup.levels <= u
    if not sel.any():
        return grid
    tr = soup.traces[sel]
    for t in range(int(box.lo[-1]), int(box.hi[-1]) + 1):
        j = t - soup.lo_level
        if not 0 <= j < tr.shape[1]:
            continue
        p = tr[:, j] - box.lo[:-1]
        ok = np.all((p >= 0) & (p < np.asarray(box.shape[:-1])), axis=1)
        idx = tuple(p[ok].T) + (np.full(int(ok.sum()), t - int(box.lo[-1])),)
        grid[idx] = False
    return grid


# ---------------------------------------------------------------------------
# consistency of Q_K under enlargement

def _cylinder(back_prev, x, fwd_next) -> tuple:
    return (tuple(back_prev), tuple(x), tuple(fwd_next))


def exact_cylinder_law(K, d: int | None = None) -> dict:
    """Normalized Q_K law of (X_{-1}, X_0, X_1).

    Q_K[X_{-1}=y, X_0=x, X_1=z] = h(y)/(2(d-1)) * 1/(2(d-1)), h the escape
    probability of the downward walk from y.
    """
    table = cached_equilibrium(K, d)
    from .lattice import jumps
    dn, up = jumps(table.d, -1), jumps(table.d, 1)
    q = 2 * (table.d - 1)
    law = {}
    for s, e in zip(table.sites, table.e_values):
        if e <= 0:
            continue
        x = tuple(int(c) for c in s)
        for a in dn:
            y = tuple(i + j for i, j in zip(x, a))
            hy = table.escape(y)
            if hy <= 0:
                continue
            for b in up:
                z = tuple(i + j for i, j in zip(x, b))
                law[(y, x, z)] = hy / q / q / table.cap
    return law


def _q_samples(K, n: int, rng, d, lo_pad: int = 1, hi_pad: int = 1):
    table = cached_equilibrium(K, d)
    idx = rng.choice(len(table.sites), size=n, p=table.e_tilde)
    anchors = table.sites[idx]
    lo, hi = table.t_lo - lo_pad, table.t_hi + hi_pad
    back = sample_backward(table, anchors[:, :-1], anchors[:, -1], lo, rng)
    fwd = sample_forward(anchors[:, :-1], anchors[:, -1], hi, table.d, rng)
    f0 = int(anchors[:, -1].min())
    L = hi - lo + 1
    traces = np.zeros((n, L, table.d - 1), dtype=np.int64)
    lv = np.arange(lo, hi + 1)
    ok = lv[None, :] <= anchors[:, -1:]
    traces[:, : back.shape[1]][ok[:, : back.shape[1]]] = back[ok[:, : back.shape[1]]]
    fpart = np.zeros_like(traces)
    fpart[:, f0 - lo:] = fwd
    ok = lv[None, :] > anchors[:, -1:]
    traces[ok] = fpart[ok]
    return table, anchors, traces, lo


def _cylinders_direct(K, n, rng, d):
    table, anchors, traces, lo = _q_samples(K, n, rng, d)
    out = {}
    for a, tr in zip(anchors, traces):
        j = int(a[-1]) - lo
        key = (tuple(tr[j - 1]) + (int(a[-1]) - 1,), tuple(int(c) for c in a), tuple(tr[j + 1]) + (int(a[-1]) + 1,))
        key = tuple(tuple(int(c) for c in s) for s in key)
        out[key] = out.get(key, 0) + 1
    return out


def _cylinders_reanchored(K, Kp, n, rng, d):
    """Sample Q_{K'} and re-anchor the paths that meet K at H_K."""
    tK = cached_equilibrium(K, d)
    table, anchors, traces, lo = _q_samples(Kp, n, rng, d, lo_pad=1, hi_pad=1)
    Kset = tK.K
    # mask over (path, level) of membership in K
    inK = np.zeros(traces.shape[:2], dtype=bool)
    for s in Kset:
        j = s[-1] - lo
        inK[:, j] |= np.all(traces[:, j] == np.asarray(s[:-1]), axis=1)
    hit = inK.any(axis=1)
    first = np.argmax(inK, axis=1)
    out = {}
    for i in np.flatnonzero(hit):
        j = int(first[i])
        t = lo + j
        key = (tuple(traces[i, j - 1]) + (t - 1,), tuple(traces[i, j]) + (t,), tuple(traces[i, j + 1]) + (t + 1,))
        key = tuple(tuple(int(c) for c in s) for s in key)
        out[key] = out.get(key, 0) + 1
    return out, int(hit.sum())


@dataclass
class QKReport:
    n: int
    hits: int
    cap_K: float
    cap_Kp: float
    chi2: float
    p_value: float
    dof: int
    tv_reanchored: float
    tv_direct: float
    mass_z: float
    inconclusive: bool


def qk_consistency_test(K, Kp, n: int, seed=None, d: int | None = None, min_hits: int = 1000) -> QKReport:
    """Compare (X_{-1}, X_0, X_1) under Q_K with the same cylinder of
    Q_{K'} paths re-anchored at their entrance in K (K a subset of K')."""
    K = {tuple(int(c) for c in x) for x in K}
    Kp = {tuple(int(c) for c in x) for x in Kp}
    if not K <= Kp:
        raise ParameterError("K must be a subset of K'")
    rng = as_generator(seed)
    re, hits = _cylinders_reanchored(K, Kp, n, rng, d)
    direct = _cylinders_direct(K, n, rng, d)
    capK, capKp = cached_equilibrium(K, d).cap, cached_equilibrium(Kp, d).cap
    exact = exact_cylinder_law(K, d)
    if hits < min_hits:
        return QKReport(n, hits, capK, capKp, float("nan"), float("nan"), 0, float("nan"), float("nan"),
                        float("nan"), True)
    chi2, p, dof = homogeneity_test(re, direct)
    # hit fraction vs cap(K)/cap(K')
    ratio = capK / capKp
    z = (hits / n - ratio) / math.sqrt(ratio * (1 - ratio) / n) if 0 < ratio < 1 else (0.0 if hits == n else float("inf"))
    return QKReport(n, hits, capK, capKp, chi2, p, dof, total_variation(normalize(re), exact),
                    total_variation(normalize(direct), exact), float(z), False)


# ---------------------------------------------------------------------------
# the slab of a soup against the trap model

@dataclass
class SlabReport:
    u: float
    n: int
    target: float
    trap_occ: dict
    soup_occ: dict
    trap_lag1: dict
    soup_lag1: dict
    trap_lag2: dict
    soup_lag2: dict
    z_occ: float
    z_lag1: float
    z_lag2: float

    def passed(self, k: float = 3.0) -> bool:
        sig = math.sqrt(self.target * (1 - self.target) / self.n) if 0 < self.target < 1 else 0.0
        ok_target = all(abs(f["estimate"] - self.target) <= k * sig for f in (self.trap_occ, self.soup_occ))
        return ok_target and all(abs(z) <= k for z in (self.z_occ, self.z_lag1, self.z_lag2))


def _cond(a, b):
    n = int(a.sum())
    return frequency(int((a & b).sum()), n).as_dict() if n else {"successes": 0, "trials": 0, "estimate": float("nan"), "lo": 0.0, "hi": 1.0}


def slab_occupancy(u: float, d: int, n: int, seed=None, T: int = 2, chunk: int = 20000):
    """Occupancy of one site over times 0..T in the trap model on Z^(d-1)
    and in a soup on the column {0} x {0..T} of Z^d; two (n, T+1) arrays."""
    if T < 2:
        raise ParameterError("need T >= 2 for the lag statistics")
    rng = as_generator(seed)
    m = d - 1
    origin = (0,) * m
    # trap model
    occ_trap = np.zeros((n, T + 1), dtype=bool)
    w = Window.ball(origin, 0)
    for i in range(n):
        f = trap_env.sample_field(m, u, w, T, rng) if u > 0 else None
        if f is not None:
            occ_trap[i] = [f.occupancy(origin, t) for t in range(T + 1)]
    # soup on the column
    col = Window(origin + (T // 2,), (0,) * m + (T // 2,)) if T % 2 == 0 else None
    K = col if col is not None else [origin + (t,) for t in range(T + 1)]
    occ_soup = np.zeros((n, T + 1), dtype=bool)
    if u > 0:
        for a in range(0, n, chunk):
            b = min(n, a + chunk)
            soup = sample_soup(K, u, rng, d=d, n_soups=b - a)
            for t in range(T + 1):
                occ_soup[a:b, t] = soup.site_occupied(origin + (t,), u)
    return occ_trap, occ_soup


def slab_report(u: float, occ_trap: np.ndarray, occ_soup: np.ndarray) -> SlabReport:
    n = len(occ_trap)
    target = 1 - math.exp(-u)
    ft, fs = frequency(int(occ_trap[:, 0].sum()), n), frequency(int(occ_soup[:, 0].sum()), n)
    l1t, l1s = _cond(occ_trap[:, 0], occ_trap[:, 1]), _cond(occ_soup[:, 0], occ_soup[:, 1])
    l2t, l2s = _cond(occ_trap[:, 0], occ_trap[:, 2]), _cond(occ_soup[:, 0], occ_soup[:, 2])

    def z(x, y):
        if not x["trials"] or not y["trials"]:
            return 0.0
        return two_proportion_z(x["successes"], x["trials"], y["successes"], y["trials"])[0]

    return SlabReport(u, n, target, ft.as_dict(), fs.as_dict(), l1t, l1s, l2t, l2s,
                      z(ft.as_dict(), fs.as_dict()), z(l1t, l1s), z(l2t, l2s))


def slab_equivalence_test(u: float, d: int, n: int, seed=None, T: int = 2, chunk: int = 20000) -> SlabReport:
    occ_trap, occ_soup = slab_occupancy(u, d, n, seed, T, chunk)
    return slab_report(u, occ_trap, occ_soup)
