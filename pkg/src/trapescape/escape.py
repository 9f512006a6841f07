"""Adapted escape strategy for a target among moving traps (spatial dimension 2).

Vacant sites are coarse-grained into 3-blocks B(x,1), x in 3Z^2, and 9-blocks
B(x,4), x in 9Z^2; a block is open when all its sites are vacant. At each
time t the target, standing at a 3-center of the open 3-cluster C_3(t-1),
runs along a shortest path inside the interior of C_3(t-1) to the nearest
9-center of C_9(t-1), then waits one time unit.

Both moves are safe by construction. A trap occupying x at time t sat on an
l1-neighbour of x at time t-1, so interior sites of C_3(t-1) are vacant at
t. For the same reason a 9-center of C_9(t-1) has its whole 3-block vacant
at t, so it is vacant at t+1.

The infinite clusters are replaced by a finite-window proxy: the largest
open cluster that comes within `band` sites of all four sides of the window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import ndimage

from .errors import ParameterError, StrategyInvariantError, UsageError, WindowExhaustedError
from .lattice import ClusterLabeling, Window, label_clusters
from .stats import frequency, mean_se
from .trap_env import TrapField

CROSS = ndimage.generate_binary_structure(2, 1)
PROXY_BAND = 9  # sites


# ---------------------------------------------------------------------------
# coarse graining

def _check_alignment(window: Window, scale: int) -> int:
    if window.dim != 2:
        raise UsageError("coarse graining is implemented for spatial dimension 2")
    if scale not in (3, 9):
        raise UsageError(f"scale must be 3 or 9, got {scale}")
    side = window.shape
    if min(side) < scale:
        raise UsageError(f"window {side} smaller than one {scale}-block")
    if any(s % scale for s in side) or any((lo + scale // 2) % scale for lo in window.lo):
        raise UsageError(f"window {window.center}+-{window.radii} is not tiled by {scale}-blocks centered on {scale}Z^2")
    return side[0] // scale


@dataclass
class CoarseGrid:
    scale: int
    open: np.ndarray  # block grid, index (i, j) <-> center lo + scale//2 + scale*(i, j)
    labeling: ClusterLabeling
    proxy: int  # canonical id of the infinite-cluster proxy, 0 if none
    window: Window

    @property
    def origin(self) -> np.ndarray:
        return self.window.lo + self.scale // 2

    def block_of(self, x) -> tuple[int, int]:
        return tuple(int(v) for v in (np.asarray(x) - self.window.lo) // self.scale)

    def center(self, b) -> tuple[int, ...]:
        return tuple(int(v) for v in self.origin + self.scale * np.asarray(b))

    def in_proxy(self, x) -> bool:
        return self.proxy > 0 and int(self.labeling.labels[self.block_of(x)]) == self.proxy

    def is_center(self, x) -> bool:
        return all((a - o) % self.scale == 0 for a, o in zip(x, self.origin))


def _proxy_id(labels: np.ndarray, sizes: np.ndarray, band_blocks: int) -> int:
    cand = None
    for ax in range(2):
        for side in (slice(0, band_blocks), slice(labels.shape[ax] - band_blocks, labels.shape[ax])):
            ids = set(np.unique(np.take(labels, range(labels.shape[ax])[side], axis=ax)).tolist())
            cand = ids if cand is None else cand & ids
    cand = sorted(cand - {0})
    if not cand:
        return 0
    # largest first, smallest id on ties
    return max(cand, key=lambda k: (sizes[k], -k))


def coarse_grain(vacancy: np.ndarray, scale: int, window: Window | None = None,
                 band: int = PROXY_BAND) -> CoarseGrid:
    vacancy = np.asarray(vacancy, dtype=bool)
    if window is None:
        if any(s % 2 == 0 for s in vacancy.shape):
            raise UsageError("vacancy grid needs odd sides when no window is given")
        window = Window((0, 0), tuple(s // 2 for s in vacancy.shape))
    if vacancy.shape != window.shape:
        raise UsageError(f"grid shape {vacancy.shape} does not match window {window.shape}")
    nb = _check_alignment(window, scale)
    blocks = vacancy.reshape(nb, scale, nb, scale).all(axis=(1, 3))
    lab = label_clusters(blocks, "l1")
    return CoarseGrid(scale, blocks, lab, _proxy_id(lab.labels, lab.sizes, max(1, band // scale)), window)


# ---------------------------------------------------------------------------
# fast per-step kernels

@numba.njit(cache=True)
def _closed_blocks(pos, R, nb3, nb9):  # single-time variant, kept for tests
    c3 = np.zeros((nb3, nb3), dtype=np.bool_)
    c9 = np.zeros((nb9, nb9), dtype=np.bool_)
    side = 2 * R + 1
    for k in range(pos.shape[0]):
        i = pos[k, 0] + R
        j = pos[k, 1] + R
        if 0 <= i < side and 0 <= j < side:
            c3[i // 3, j // 3] = True
            c9[i // 9, j // 9] = True
    return c3, c9


@numba.njit(cache=True)
def _bfs(interior, target, si, sj):
    """Shortest path in `interior` from (si, sj) to the nearest target site.

    Neighbours are scanned in lexicographic order and, among targets at the
    minimal distance, the lexicographically smallest wins. Returns an (l+1, 2)
    array of indices, or an empty array if no target is reachable.
    """
    n0, n1 = interior.shape
    dist = np.full((n0, n1), -1, dtype=np.int32)
    parent = np.full((n0, n1), -1, dtype=np.int64)
    qi = np.empty(n0 * n1, dtype=np.int32)
    qj = np.empty(n0 * n1, dtype=np.int32)
    di = np.array([-1, 0, 0, 1])
    dj = np.array([0, -1, 1, 0])
    head, tail = 0, 1
    qi[0], qj[0] = si, sj
    dist[si, sj] = 0
    best_i, best_j, best_d = -1, -1, -1
    while head < tail:
        i, j = qi[head], qj[head]
        head += 1
        d = dist[i, j]
        if best_d >= 0 and d > best_d:
            break
        if target[i, j]:
            if best_d < 0 or i < best_i or (i == best_i and j < best_j):
                best_i, best_j, best_d = i, j, d
            continue
        for k in range(4):
            a, b = i + di[k], j + dj[k]
            if 0 <= a < n0 and 0 <= b < n1 and interior[a, b] and dist[a, b] < 0:
                dist[a, b] = d + 1
                parent[a, b] = i * n1 + j
                qi[tail], qj[tail] = a, b
                tail += 1
    if best_d < 0:
        return np.empty((0, 2), dtype=np.int64)
    path = np.empty((best_d + 1, 2), dtype=np.int64)
    i, j = best_i, best_j
    for s in range(best_d, -1, -1):
        path[s, 0], path[s, 1] = i, j
        p = parent[i, j]
        if p >= 0:
            i, j = p // n1, p % n1
    return path


@numba.njit(cache=True)
def _pick_proxy(lab, n, band):
    """Largest label within `band` cells of all four sides (smaller id on ties)."""
    n0, n1 = lab.shape
    size = np.zeros(n + 1, dtype=np.int64)
    sides = np.zeros(n + 1, dtype=np.int8)
    for i in range(n0):
        for j in range(n1):
            k = lab[i, j]
            if k == 0:
                continue
            size[k] += 1
            s = 0
            if i < band:
                s |= 1
            if i >= n0 - band:
                s |= 2
            if j < band:
                s |= 4
            if j >= n1 - band:
                s |= 8
            sides[k] |= s
    best, best_size = 0, -1
    for k in range(1, n + 1):
        if sides[k] == 15 and size[k] > best_size:
            best, best_size = k, size[k]
    return best


def _fast_proxy(open_blocks: np.ndarray, band_blocks: int):
    lab, n = ndimage.label(open_blocks, structure=CROSS)
    return lab, int(_pick_proxy(lab, n, band_blocks)) if n else 0


@numba.njit(cache=True)
def _block_levels(pos, levels, R, nb3, nb9):
    """Smallest trap level in every 3- and 9-block at every time (inf when
    empty); a block is closed at intensity u iff its value is <= u."""
    T1, n = pos.shape[0], pos.shape[1]
    lv3 = np.full((T1, nb3, nb3), np.inf, dtype=np.float32)
    lv9 = np.full((T1, nb9, nb9), np.inf, dtype=np.float32)
    side = 2 * R + 1
    for t in range(T1):
        for k in range(n):
            i = pos[t, k, 0] + R
            j = pos[t, k, 1] + R
            if 0 <= i < side and 0 <= j < side:
                v = levels[k]
                if v < lv3[t, i // 3, j // 3]:
                    lv3[t, i // 3, j // 3] = v
                if v < lv9[t, i // 9, j // 9]:
                    lv9[t, i // 9, j // 9] = v
    return lv3, lv9


class BlockLevels:
    """Per-time block levels of a field, shared by runs at several u."""

    def __init__(self, field: TrapField):
        R = field.window.radii[0]
        self.field = field
        self.levels = (field.marks * field.u).astype(np.float32)
        self.lv3, self.lv9 = _block_levels(field.positions, self.levels, R, (2 * R + 1) // 3, (2 * R + 1) // 9)


class _Coarse:
    """Per-time coarse state used inside run_escape; the 3-block labeling is
    computed on first use."""

    def __init__(self, bl: BlockLevels, t: int, u: np.float32, band: int):
        self.open3, self.open9 = bl.lv3[t] > u, bl.lv9[t] > u
        self.band = band
        self.lab9, self.proxy9 = _fast_proxy(self.open9, max(1, band // 9))
        self._lab3 = None

    def _label3(self):
        if self._lab3 is None:
            self._lab3, self._proxy3 = _fast_proxy(self.open3, max(1, self.band // 3))

    @property
    def lab3(self):
        self._label3()
        return self._lab3

    @property
    def proxy3(self):
        self._label3()
        return self._proxy3


# ---------------------------------------------------------------------------
# the strategy

@dataclass
class EscapeTrajectory:
    steps: list  # (x, y, t) triples, x, y relative to the window center
    T_det: int | None  # None means not detected by maxT
    speeds: np.ndarray  # S_t for t = 0..maxT
    frozen: bool
    maxT: int
    invariant_failures: int = 0
    safety_violations: int = 0
    bound_violations: int = 0
    proxy_absent: int = 0
    G_sizes: list = field(default_factory=list)  # (t, S_t, |G|) whenever S_t > 9

    @property
    def survived(self) -> bool:
        return self.T_det is None

    @property
    def inconclusive(self) -> bool:
        return self.invariant_failures > 0

    @property
    def lateral_moves(self) -> int:
        return sum(1 for a, b in zip(self.steps, self.steps[1:]) if a[2] == b[2])

    def row(self) -> dict:
        s = self.speeds[1:self.maxT] if self.maxT > 1 else self.speeds[:0]
        return {
            "T_det": "inf" if self.T_det is None else self.T_det,
            "survived": int(self.survived),
            "frozen": int(self.frozen),
            "mean_S": float(s.mean()) if s.size else 0.0,
            "max_S": int(s.max()) if s.size else 0,
        }


class _Runner:
    def __init__(self, field: TrapField, maxT: int, band: int, strict: bool,
                 u: float | None = None, blocks: BlockLevels | None = None):
        if field.spatial_dim != 2:
            raise UsageError("the escape strategy is implemented for spatial dimension 2")
        if field.T < maxT:
            raise ParameterError(f"field horizon {field.T} < maxT {maxT}")
        if field.window.center != (0, 0) or len(set(field.window.radii)) != 1:
            raise UsageError("run_escape needs a square window centered at the origin")
        _check_alignment(field.window, 9)
        self.f, self.maxT, self.band, self.strict = field, maxT, band, strict
        self.R = field.window.radii[0]
        self.blocks = blocks if blocks is not None else BlockLevels(field)
        self.u = np.float32(field.u if u is None else u)
        if self.u > np.float32(field.u):
            raise ParameterError(f"u={u} above the field intensity {field.u}")
        self.cache: dict[int, _Coarse] = {}

    def coarse(self, t: int) -> _Coarse:
        if t not in self.cache:
            self.cache = {k: v for k, v in self.cache.items() if k >= t - 1}
            self.cache[t] = _Coarse(self.blocks, t, self.u, self.band)
        return self.cache[t]

    def occupied(self, x, t) -> bool:
        p = self.f.positions[t]
        return bool(np.any((p[:, 0] == x[0]) & (p[:, 1] == x[1]) & (self.blocks.levels <= self.u)))

    def in_c3(self, c: _Coarse, x) -> bool:
        i, j = (x[0] + self.R) // 3, (x[1] + self.R) // 3
        return c.proxy3 > 0 and x[0] % 3 == 0 and x[1] % 3 == 0 and c.lab3[i, j] == c.proxy3

    def in_c9_center(self, c: _Coarse, x) -> bool:
        i, j = (x[0] + self.R) // 9, (x[1] + self.R) // 9
        return c.proxy9 > 0 and x[0] % 9 == 0 and x[1] % 9 == 0 and c.lab9[i, j] == c.proxy9

    def path(self, c: _Coarse, x):
        """Shortest path inside the interior of C_3 to the nearest C_9 center."""
        side = 2 * self.R + 1
        sites = np.kron(c.lab3 == c.proxy3, np.ones((3, 3), dtype=bool))
        interior = ndimage.binary_erosion(sites, structure=CROSS, border_value=0)
        target = np.zeros((side, side), dtype=bool)
        b9 = np.argwhere(c.lab9 == c.proxy9)
        target[b9[:, 0] * 9 + 4, b9[:, 1] * 9 + 4] = True
        p = _bfs(interior, target & interior, x[0] + self.R, x[1] + self.R)
        return [(int(a) - self.R, int(b) - self.R) for a, b in p]

    def G_size(self, c: _Coarse, x) -> int:
        comp, _ = ndimage.label(c.lab9 != c.proxy9, structure=CROSS)
        k = comp[(x[0] + self.R) // 9, (x[1] + self.R) // 9]
        return int((comp == k).sum()) if k else 0


def strategy_step(x, t: int, coarse_prev: _Coarse, runner: _Runner) -> list:
    """Moves executed at time t from a 3-center x of C_3(t-1): lateral sites
    at time t followed by the arrival at time t+1."""
    if coarse_prev.proxy9 == 0:
        raise StrategyInvariantError(f"no 9-block proxy cluster at time {t - 1}")
    if not runner.in_c3(coarse_prev, x):
        raise StrategyInvariantError(f"{x} is not a 3-center of the proxy C_3({t - 1})")
    if runner.in_c9_center(coarse_prev, x):
        return [(x[0], x[1], t + 1)]
    p = runner.path(coarse_prev, x)
    if not p:
        raise StrategyInvariantError(f"no C_9({t - 1}) center reachable from {x} inside C_3({t - 1})")
    return [(a, b, t) for a, b in p[1:]] + [(p[-1][0], p[-1][1], t + 1)]


def run_escape(field: TrapField, maxT: int, band: int = PROXY_BAND, strict: bool = False,
               u: float | None = None, blocks: BlockLevels | None = None) -> EscapeTrajectory:
    """Run the strategy for times 0..maxT using only the environment up to t-1
    when choosing the moves made at time t.

    When the proxy clusters break the strategy's precondition the target
    waits in place; such steps are counted in `invariant_failures`
    (strict=True raises instead). With u below field.u the run sees only
    the traps of level <= u, the coupled thinning of the field.
    """
    r = _Runner(field, maxT, band, strict, u, blocks)
    steps = [(0, 0, 0)]
    speeds = np.zeros(maxT + 1, dtype=np.int64)
    traj = EscapeTrajectory(steps, None, speeds, False, maxT)
    if r.occupied((0, 0), 0):
        traj.T_det = 0
        return traj
    if maxT == 0:
        return traj
    steps.append((0, 0, 1))
    if r.occupied((0, 0), 1):
        traj.T_det = 1
        return traj
    traj.frozen = not r.in_c3(r.coarse(0), (0, 0))
    x, t = (0, 0), 1
    margin = 9
    while t < maxT:
        if traj.frozen:
            new = [(0, 0, t + 1)]
        else:
            c = r.coarse(t - 1)
            if c.proxy9 == 0:
                traj.proxy_absent += 1
            try:
                new = strategy_step(x, t, c, r)
            except StrategyInvariantError:
                if strict:
                    raise
                traj.invariant_failures += 1
                new = [(x[0], x[1], t + 1)]
            else:
                lateral = len(new) - 1
                speeds[t] = lateral
                if lateral > 9:
                    g = r.G_size(c, x)
                    traj.G_sizes.append((t, lateral, g))
                    if lateral > 81 * g + 9:
                        traj.bound_violations += 1
                for a, b, s in new[:-1]:
                    if r.occupied((a, b), s):
                        traj.safety_violations += 1
                end = new[-1]
                if r.occupied(end[:2], end[2]):
                    traj.safety_violations += 1
        for a, b, s in new:
            if max(abs(a), abs(b)) > r.R - margin:
                raise WindowExhaustedError(f"escape path reached ({a}, {b}) near the frame of radius {r.R}",
                                           needed_radius=2 * r.R)
            steps.append((a, b, s))
            if r.occupied((a, b), s):
                traj.T_det = s
                return traj
        x, t = new[-1][:2], new[-1][2]
    return traj


# ---------------------------------------------------------------------------
# isolated component of the complement of the infinite cluster

def alpha_series(p: float = 8 / 9, rtol: float = 1e-12) -> tuple[float, float]:
    """sum_{n>=1} 4 n^3 [8(1-p)]^floor(sqrt(n)/2), with a bound on the
    neglected tail. At p = 8/9 this is the constant alpha.

    Terms are grouped by k = floor(sqrt(n)/2), i.e. n in [4k^2, 4(k+1)^2).
    """
    r = 8 * (1 - p)
    if not 0 <= r < 1:
        raise ParameterError("series diverges unless 8(1-p) < 1")

    def cubes(a, b):  # sum of n^3 for a <= n <= b
        s = lambda m: (m * (m + 1) // 2) ** 2
        return s(b) - s(a - 1)

    terms = []
    k = 0
    while True:
        g = 4 * cubes(max(1, 4 * k * k), 4 * (k + 1) ** 2 - 1) * r ** k
        terms.append(g)
        if k > 10:
            nxt = 4 * cubes(4 * (k + 1) ** 2, 4 * (k + 2) ** 2 - 1) * r ** (k + 1)
            q = nxt / g
            # group ratios decrease towards r, so the tail is geometric past here
            if q < 1:
                tail = nxt / (1 - q)
                total = math.fsum(terms)
                if tail <= rtol * total:
                    return total, tail
        k += 1


@dataclass
class Lemma1Sample:
    G: int | None  # None: proxy cluster absent
    origin_in_cluster: bool


def lemma1_component(open_grid: np.ndarray, band: int = 1) -> Lemma1Sample:
    """|G| for G the l1 component of the complement of the proxy infinite
    cluster that contains the grid center."""
    grid = np.asarray(open_grid, dtype=bool)
    raw, n = ndimage.label(grid, structure=CROSS)
    sizes = np.bincount(raw.ravel(), minlength=n + 1)
    k = _proxy_id(raw, sizes, band) if n else 0
    if k == 0:
        return Lemma1Sample(None, False)
    c = tuple(s // 2 for s in grid.shape)
    if raw[c] == k:
        return Lemma1Sample(0, True)
    comp, _ = ndimage.label(raw != k, structure=CROSS)
    return Lemma1Sample(int((comp == comp[c]).sum()), False)


@dataclass
class Lemma1Report:
    p: float
    n: int
    inconclusive: int
    mean: float
    se: float
    bound: float
    alpha: float

    @property
    def passed(self) -> bool:
        return self.mean - 3 * self.se <= self.bound


def lemma1_experiment(p: float, size: int, n: int, rng: np.random.Generator) -> Lemma1Report:
    alpha, _ = alpha_series()
    vals, bad = [], 0
    for _ in range(n):
        s = lemma1_component(rng.random((size, size)) < p)
        if s.G is None:
            bad += 1
        else:
            vals.append(s.G)
    m, se = mean_se(vals) if len(vals) > 1 else (float("nan"), float("inf"))
    return Lemma1Report(p, n, bad, m, se, alpha * (1 - p), alpha)


def coupled_escape(u_values, window: Window, maxT: int, seed, band: int = PROXY_BAND):
    """One trap field at max(u_values), thinned to each u: trajectories share
    the randomness so survival is comparable across u."""
    from .trap_env import sample_field
    top = max(u_values)
    base = sample_field(2, top, window, maxT, seed)
    bl = BlockLevels(base)
    return {u: run_escape(base, maxT, band, u=u, blocks=bl) for u in u_values}


def survival_summary(trajs) -> dict:
    n = len(trajs)
    surv = sum(t.survived for t in trajs)
    cond = [t.speeds[1:t.maxT].mean() for t in trajs if t.survived and t.maxT > 1]
    return {
        "runs": n,
        "survival": frequency(surv, n).as_dict(),
        "frozen": sum(t.frozen for t in trajs),
        "inconclusive": sum(t.inconclusive for t in trajs),
        "safety_violations": sum(t.safety_violations for t in trajs),
        "bound_violations": sum(t.bound_violations for t in trajs),
        "mean_speed_given_survival": float(np.mean(cond)) if cond else float("nan"),
    }
