"""Renormalization bookkeeping: scales, constants, embeddings, star paths.

Scales are L_n = l_0^n L_0. The error functions delta, eps and eps_bar, the
constants D(d), C(d) and the non-percolation level u' = 3u/2 are evaluated
with mpmath, since l_0 at theorem scale is far beyond double range once
raised to powers. The percolation probe is the empirical counterpart: a
crossing frequency of the vacant set measured on a finite window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import mpmath as mp
import numpy as np
from scipy import ndimage

from .errors import DimensionError, ParameterError
from .lattice import Window, linf
from .rng import as_generator

mp.mp.dps = 60


# ---------------------------------------------------------------------------
# formulas

def _mpf(x):
    return x if isinstance(x, mp.mpf) else mp.mpf(x)


def D_const(d: int, c_d) -> mp.mpf:
    if d < 3:
        raise DimensionError(f"d must be >= 3, got {d}")
    if c_d <= 0:
        raise ParameterError("c_d must be positive")
    return max(8 * mp.e ** 4 * _mpf(c_d) * mp.mpf(10) ** (mp.mpf(3) * (d - 1) / 2), mp.mpf(80))


def C_const(d: int, D) -> int:
    """(D e^-3)^(4/(d-2)) rounded up to a multiple of 1000."""
    if d < 3:
        raise DimensionError(f"d must be >= 3, got {d}")
    raw = (_mpf(D) * mp.e ** -3) ** (mp.mpf(4) / (d - 2))
    return int(mp.ceil(raw / 1000)) * 1000


def constants(d: int, c_d) -> tuple[mp.mpf, int]:
    D = D_const(d, c_d)
    return D, C_const(d, D)


def delta(n: int, l0, d: int, D) -> mp.mpf:
    if n < 0 or l0 < 1:
        raise ParameterError("need n >= 0 and l0 >= 1")
    return _mpf(D) * mp.mpf(n + 1) ** mp.mpf(-1.5) * _mpf(l0) ** (-mp.mpf(d - 2) / 4)


def eps(u, n: int, l0, d: int, L0: int = 1) -> mp.mpf:
    if u <= 0 or n < 0 or l0 < 1:
        raise ParameterError("need u > 0, n >= 0, l0 >= 1")
    Ln = _mpf(l0) ** n * L0
    return 2 * mp.exp(-2 * _mpf(u) * mp.mpf(n + 1) ** -3 * Ln ** (mp.mpf(d - 1) / 2) * mp.sqrt(l0))


def eps_bar(u, l) -> mp.mpf:
    if u <= 0 or l < 1:
        raise ParameterError("need u > 0 and l >= 1")
    q = mp.exp(-_mpf(u) * mp.sqrt(l))
    return 2 * q / (1 - q)


def formulas(n: int, l0, u, l, d: int, D) -> tuple[mp.mpf, mp.mpf, mp.mpf]:
    return delta(n, l0, d, D), eps(u, n, l0, d), eps_bar(u, l)


def zeta_three_halves(tol: float = 1e-12) -> mp.mpf:
    """sum_{n>=1} n^{-3/2} by a partial sum plus the Euler-Maclaurin tail."""
    N = 1000
    head = mp.fsum(mp.mpf(k) ** mp.mpf(-1.5) for k in range(1, N))
    # tail from N: integral + f(N)/2 - f'(N)/12 + f'''(N)/720
    Nf = mp.mpf(N)
    tail = 2 / mp.sqrt(Nf) + Nf ** -1.5 / 2 + mp.mpf(1.5) * Nf ** -2.5 / 12 - mp.mpf(1.5 * 2.5 * 3.5) * Nf ** -4.5 / 720
    return head + tail


@dataclass(frozen=True)
class ScaleSystem:
    d: int
    l0: int
    L0: int = 1
    theorem_mode: bool = True

    def __post_init__(self):
        if self.d < 3 and self.theorem_mode:
            raise DimensionError("theorem mode needs d >= 3")
        if self.l0 < 1 or self.L0 < 1:
            raise ParameterError("l0 and L0 must be >= 1")
        if self.theorem_mode and (self.l0 % 1000 or self.L0 != 1):
            raise ParameterError("theorem mode needs l0 a multiple of 1000 and L0 = 1")

    def L(self, n: int) -> int:
        return self.l0 ** n * self.L0


# ---------------------------------------------------------------------------
# proper embeddings of the binary tree

Node = tuple  # tuple of 1s and 2s, () is the root


@dataclass
class ProperEmbedding:
    n: int
    sites: dict  # Node -> Site


def tree_nodes(n: int) -> list[Node]:
    out = [()]
    level = [()]
    for _ in range(n):
        level = [m + (c,) for m in level for c in (1, 2)]
        out += level
    return out


def validate_embedding(T: ProperEmbedding, scales: ScaleSystem) -> tuple[bool, str | None]:
    """Check clauses (a)-(c). Returns (ok, first violated clause)."""
    n = T.n
    nodes = tree_nodes(n)
    if set(T.sites) != set(nodes):
        return False, "domain: embedding must be defined exactly on the tree nodes"
    root = T.sites[()]
    if any(c % scales.L(n) for c in root):
        return False, "(a): root not in L_n"
    for m in nodes:
        k = len(m)
        if any(c % scales.L(n - k) for c in T.sites[m]):
            return False, f"(b): node {m} at depth {k} not in L_{n - k}"
    for m in nodes:
        k = len(m)
        if k >= n:
            continue
        Lk = scales.L(n - k)
        a, b = T.sites[m + (1,)], T.sites[m + (2,)]
        p = T.sites[m]
        if linf(a, p) > Lk or linf(b, p) > Lk:
            return False, f"(c): a child of {m} is outside B(T(m), L_{n - k})"
        if not 100 * linf(a, b) > Lk:
            return False, f"(c): children of {m} are not separated by more than L_{n - k}/100"
    return True, None


def random_embedding(n: int, scales: ScaleSystem, root=None, seed=None) -> ProperEmbedding:
    """Random proper embedding: children uniform on the admissible points of
    L_{n-k-1} in B(T(m), L_{n-k}), resampled until separated."""
    rng = as_generator(seed)
    d = scales.d
    root = tuple([0] * d) if root is None else tuple(root)
    sites = {(): root}
    level = [()]
    for k in range(n):
        Lk, Lc = scales.L(n - k), scales.L(n - k - 1)
        r = Lk // Lc
        nxt = []
        for m in level:
            p = np.asarray(sites[m])
            for _ in range(10_000):
                a = p + Lc * rng.integers(-r, r + 1, size=d)
                b = p + Lc * rng.integers(-r, r + 1, size=d)
                if 100 * int(np.abs(a - b).max()) > Lk:
                    break
            else:
                raise ParameterError("could not place separated children; scales too small")
            sites[m + (1,)] = tuple(int(c) for c in a)
            sites[m + (2,)] = tuple(int(c) for c in b)
            nxt += [m + (1,), m + (2,)]
        level = nxt
    return ProperEmbedding(n, sites)


# ---------------------------------------------------------------------------
# star paths

def star_path_event(G: np.ndarray, x: Sequence[int], N: int, origin: Sequence[int] | None = None) -> bool:
    """A(x, N, G) on the L_0 = 1 lattice: is there a path of l_inf-neighbors
    from x to a site z with |z - x|_inf > N, with G true at every vertex?

    G is a boolean array whose index 0 sits at `origin`; it must cover
    B(x, N + 1).
    """
    G = np.asarray(G, dtype=bool)
    d = G.ndim
    origin = np.zeros(d, dtype=int) if origin is None else np.asarray(origin)
    xi = np.asarray(x) - origin
    if np.any(xi - N - 1 < 0) or np.any(xi + N + 1 >= G.shape):
        raise ParameterError("G must cover B(x, N + 1)")
    if N < 0:
        raise ParameterError("N must be >= 0")
    sl = tuple(slice(c - N - 1, c + N + 2) for c in xi)
    sub = G[sl]
    if not sub[(N + 1,) * d]:
        return False
    lab, _ = ndimage.label(sub, structure=np.ones((3,) * d, dtype=bool))
    mine = lab[(N + 1,) * d]
    ring = np.ones(sub.shape, dtype=bool)
    ring[(slice(1, -1),) * d] = False
    return bool(np.any(lab[ring] == mine))


# ---------------------------------------------------------------------------
# the non-percolation level

@dataclass
class Theorem3Report:
    d: int
    c_d: float
    D: mp.mpf
    C: int
    zeta: mp.mpf
    l0_star: int
    product_bound: mp.mpf  # exp(D l0^{-(d-2)/4} zeta(3/2)), must be < 3/2
    u: float | None
    u_prime: float | None
    u_threshold: mp.mpf  # the exact smallest u meeting the second condition
    grid_monotone: bool
    failing: str | None
    largest_tried: float | None
    rows: list = field(default_factory=list)


def _second_condition(u, l0, d) -> mp.mpf:
    """(2 l0 + 1)^{2d} [e^{-u} + eps_bar(u/2, l0)] (to be <= e^{-1})."""
    u = _mpf(u)
    return (2 * mp.mpf(l0) + 1) ** (2 * d) * (mp.exp(-u) + eps_bar(u / 2, l0))


def smallest_l0(d: int, D, C: int, Delta=mp.mpf(0.5)) -> int:
    """Smallest multiple of 1000, >= C, with exp(D l0^{-(d-2)/4} zeta) < 1 + Delta."""
    z = mp.zeta(1.5)
    need = (_mpf(D) * z / mp.log(1 + Delta)) ** (mp.mpf(4) / (d - 2))
    l0 = max(int(mp.ceil(need / 1000)) * 1000, C, 1000)
    # guard the strict inequality against the boundary case
    while not mp.exp(_mpf(D) * mp.mpf(l0) ** (-mp.mpf(d - 2) / 4) * z) < 1 + Delta:
        l0 += 1000
    while l0 - 1000 >= max(C, 1000) and mp.exp(_mpf(D) * mp.mpf(l0 - 1000) ** (-mp.mpf(d - 2) / 4) * z) < 1 + Delta:
        l0 -= 1000
    return l0


def theorem3_pipeline(d: int, c_d: float, u_grid: Sequence[float]) -> Theorem3Report:
    D, C = constants(d, c_d)
    z = mp.zeta(1.5)
    em = zeta_three_halves()
    assert abs(em - z) < mp.mpf(1e-9), "zeta(3/2) cross-check failed"
    l0 = smallest_l0(d, D, C)
    prod = mp.exp(D * mp.mpf(l0) ** (-mp.mpf(d - 2) / 4) * z)
    grid = sorted(float(u) for u in u_grid)
    if not grid or grid[0] <= 0:
        raise ParameterError("u grid must be nonempty and positive")
    vals = [_second_condition(u, l0, d) for u in grid]
    mono = all(b <= a for a, b in zip(vals, vals[1:]))
    lim = mp.exp(-1)
    rows = [{"u": u, "value": mp.nstr(v, 12), "ok": bool(v <= lim)} for u, v in zip(grid, vals)]
    # the left side is decreasing in u, so bisection gives the exact threshold
    lo, hi = mp.mpf(1e-6), mp.mpf(1)
    while _second_condition(hi, l0, d) > lim:
        hi *= 2
    for _ in range(200):
        mid = (lo + hi) / 2
        if _second_condition(mid, l0, d) <= lim:
            hi = mid
        else:
            lo = mid
    hit = next((u for u, v in zip(grid, vals) if v <= lim), None)
    failing = None if hit is not None else "second condition: (2 l0 + 1)^{2d} [e^{-u} + eps_bar(u/2, l0)] > e^{-1} on the whole grid"
    return Theorem3Report(d, float(c_d), D, C, z, l0, prod, hit, None if hit is None else 1.5 * hit, hi, mono,
                          failing, grid[-1], rows)


# ---------------------------------------------------------------------------
# capacity sandwich for the bridge set S

@dataclass
class SandwichReport:
    lower: float
    upper: float
    cap_K: float
    cap_ball: float
    cap_S: float | None
    n_added: int | None
    feasible: bool
    simple_bounds_ok: bool


def cap_sandwich(n: int, l0: int, d: int, L0: int = 1) -> tuple[mp.mpf, mp.mpf]:
    X = mp.mpf(n + 1) ** mp.mpf(-1.5) * mp.mpf(l0) ** (mp.mpf(d) / 4) * (mp.mpf(l0) ** n * L0) ** (mp.mpf(d - 1) / 2)
    return X / 2, 2 * X


def sandwich_feasibility(K: set, ball: Window, lower: float, upper: float, n_tree: int | None = None,
                         L0: int = 1) -> SandwichReport:
    """Grow S from K inside `ball` one site at a time (nearest to the ball
    center first). cap is nondecreasing along the growth and increases by at
    most 1 per site, so if cap(K) <= upper, cap(ball) >= lower and
    upper - lower >= 1, some prefix lands in [lower, upper]; it is found by
    bisection over the prefix length."""
    from .potential import capacity
    K = {tuple(int(c) for c in x) for x in K}
    d = ball.dim
    if not all(ball.contains(x) for x in K):
        raise ParameterError("K must lie inside the ball")
    center = np.asarray(ball.center)
    rest = [s for s in ball.sites() if s not in K]
    rest.sort(key=lambda s: (int(np.abs(np.asarray(s) - center).max()), s))
    capK = capacity(K, d)
    cap_ball = capacity(ball, d)
    simple = True
    if n_tree is not None:
        simple = capK <= 2 ** (n_tree + 1) * 2 * d * (4 * L0 + 1) ** (d - 1) + 1e-9
        simple &= (ball.radii[0]) ** (d - 1) <= cap_ball + 1e-9
    if capK > upper or cap_ball < lower:
        return SandwichReport(lower, upper, capK, cap_ball, None, None, False, simple)
    if capK >= lower:
        return SandwichReport(lower, upper, capK, cap_ball, capK, 0, True, simple)
    lo, hi = 0, len(rest)  # cap(prefix lo) < lower <= cap(prefix hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if capacity(K | set(rest[:mid]), d) >= lower:
            hi = mid
        else:
            lo = mid
    capS = capacity(K | set(rest[:hi]), d)
    return SandwichReport(lower, upper, capK, cap_ball, capS, hi, lower <= capS <= upper, simple)


# ---------------------------------------------------------------------------
# percolation probe

def level_field(soup, window: Window) -> np.ndarray:
    """Smallest level of a path through each site of the window, axes
    (x_1, ..., x_{d-1}, t); +inf where no path passes."""
    shape = window.shape
    f = np.full(int(np.prod(shape)), np.inf)
    N, L, m = soup.traces.shape
    if N == 0:
        return f.reshape(shape)
    lv = soup.lo_level + np.arange(L)
    rel_t = lv - window.lo[-1]
    ok_t = (rel_t >= 0) & (rel_t < shape[-1])
    tr = soup.traces[:, ok_t, :] - window.lo[:-1]
    rt = np.broadcast_to(rel_t[ok_t], tr.shape[:2])
    ok = np.all((tr >= 0) & (tr < np.asarray(shape[:-1])), axis=2)
    coords = [tr[..., k][ok] for k in range(m)] + [rt[ok]]
    flat = np.ravel_multi_index(coords, shape)
    lev = np.broadcast_to(soup.levels[:, None], tr.shape[:2])[ok]
    np.minimum.at(f, flat, lev)
    return f.reshape(shape)


def crossing(vacant: np.ndarray, structure) -> bool:
    """Does the vacant cluster of the center or one of its l1 neighbors
    reach the frame?"""
    d = vacant.ndim
    c = np.asarray(vacant.shape) // 2
    seeds = [tuple(c)]
    for ax in range(d):
        for s in (-1, 1):
            e = c.copy()
            e[ax] += s
            seeds.append(tuple(e))
    seeds = [s for s in seeds if vacant[s]]
    if not seeds:
        return False
    lab, _ = ndimage.label(vacant, structure=structure)
    ids = {int(lab[s]) for s in seeds}
    frame = np.ones(vacant.shape, dtype=bool)
    frame[(slice(1, -1),) * d] = False
    return bool(np.isin(lab[frame], list(ids)).any())


def probe_replica(d: int, u_grid: Sequence[float], radius: int, rng) -> np.ndarray:
    """Crossing indicators along the grid from one coupled soup."""
    from .interlace import sample_soup
    grid = np.asarray(sorted(u_grid), dtype=float)
    window = Window.ball((0,) * d, radius)
    u_max = float(grid.max())
    out = np.zeros(len(grid), dtype=bool)
    if u_max <= 0:
        out[:] = True
        return out
    soup = sample_soup(window, u_max, rng, d=d)
    f = level_field(soup, window)
    st = ndimage.generate_binary_structure(d, 1)
    # V^u shrinks with u, so crossing is monotone; stop at the first failure
    for i, u in enumerate(grid):
        if not crossing(f > u, st):
            break
        out[i] = True
    return out


@dataclass
class ProbeReport:
    u_grid: list
    frequencies: list
    counts: list
    n: int
    monotone: bool  # sample-wise
    u_low: float | None  # largest u with frequency > 0.9
    u_high: float | None  # smallest u with frequency < 0.1


def percolation_probe(d: int, u_grid: Sequence[float], radius: int, n: int, seed=None,
                      replica_fn: Callable | None = None) -> ProbeReport:
    if d < 3:
        raise DimensionError("the probe needs d >= 3")
    from .rng import stream
    grid = sorted(float(u) for u in u_grid)
    rows = []
    for i in range(n):
        rows.append(probe_replica(d, grid, radius, stream(seed, i)))
    X = np.asarray(rows) if rows else np.zeros((0, len(grid)), dtype=bool)
    return summarize_probe(grid, X)


def summarize_probe(grid, X: np.ndarray) -> ProbeReport:
    n = len(X)
    mono = bool(np.all(X[:, 1:] <= X[:, :-1])) if n else True
    freq = X.mean(axis=0) if n else np.zeros(len(grid))
    lows = [u for u, f in zip(grid, freq) if f > 0.9]
    highs = [u for u, f in zip(grid, freq) if f < 0.1]
    return ProbeReport(list(grid), [float(f) for f in freq], [int(c) for c in X.sum(axis=0)] if n else [0] * len(grid),
                       n, mono, max(lows) if lows else None, min(highs) if highs else None)
