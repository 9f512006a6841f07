"""Integer-lattice geometry shared by the rest of the package.

Sites are plain tuples of ints. The last coordinate is the vertical (time)
axis wherever a distinction is made. Boxes are axis-aligned and carry no
wraparound; code that needs exactness enlarges the box instead.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy import ndimage

Site = tuple[int, ...]

NEIGHBOR_MODES = ("l1", "linf-star", "upward-J", "downward-J")


from .errors import DimensionError, UsageError  # noqa: F401


def unit_vectors(m: int) -> list[tuple[int, ...]]:
    """The 2m vectors a in Z^m with |a|_1 = 1, in lexicographic order."""
    out = []
    for i in range(m):
        for s in (-1, 1):
            v = [0] * m
            v[i] = s
            out.append(tuple(v))
    return sorted(out)


def jumps(d: int, direction: int = 1) -> list[Site]:
    """Upward jumps (a, 1) with |a|_1 = 1 (direction=+1) or their negatives."""
    if d < 3:
        raise DimensionError(f"directed jumps need d >= 3, got d={d}")
    return [tuple(direction * c for c in a) + (direction,) for a in unit_vectors(d - 1)]


def neighbors(x: Sequence[int], mode: str = "l1") -> list[Site]:
    x = tuple(int(c) for c in x)
    d = len(x)
    if mode == "l1":
        steps = unit_vectors(d)
    elif mode == "linf-star":
        steps = [v for v in itertools.product((-1, 0, 1), repeat=d) if any(v)]
    elif mode == "upward-J":
        steps = jumps(d, 1)
    elif mode == "downward-J":
        steps = jumps(d, -1)
    else:
        raise UsageError(f"unknown neighbor mode {mode!r}; expected one of {NEIGHBOR_MODES}")
    return [tuple(a + b for a, b in zip(x, s)) for s in steps]


def boundary(K: Iterable[Sequence[int]], which: str = "inner") -> set[Site]:
    K = {tuple(int(c) for c in x) for x in K}
    if which == "inner":
        return {x for x in K if any(y not in K for y in neighbors(x, "l1"))}
    if which == "outer":
        return {y for x in K for y in neighbors(x, "l1") if y not in K}
    raise UsageError(f"boundary kind must be 'inner' or 'outer', got {which!r}")


def interior(K: Iterable[Sequence[int]]) -> set[Site]:
    K = {tuple(int(c) for c in x) for x in K}
    return K - boundary(K, "inner")


def linf(x: Sequence[int], y: Sequence[int]) -> int:
    return max(abs(a - b) for a, b in zip(x, y))


def set_distance(A: Iterable[Sequence[int]], B: Iterable[Sequence[int]]) -> int:
    """min |x - y|_inf over x in A, y in B."""
    a = np.asarray(list(A), dtype=np.int64)
    b = np.asarray(list(B), dtype=np.int64)
    return int(np.abs(a[:, None, :] - b[None, :, :]).max(axis=2).min())


def radius(A: Iterable[Sequence[int]]) -> int:
    """Smallest r such that some ball B(z, r) contains A."""
    a = np.asarray(list(A), dtype=np.int64)
    ext = a.max(axis=0) - a.min(axis=0)
    return int(((ext + 1) // 2).max())


@dataclass(frozen=True)
class Window:
    """Axis-aligned box center +- radii. `topology` is informational:
    'hard-boundary' or 'exact-truncation'."""

    center: Site
    radii: tuple[int, ...]
    topology: str = "hard-boundary"

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(int(c) for c in self.center))
        r = self.radii
        if isinstance(r, (int, np.integer)):
            r = (int(r),) * len(self.center)
        r = tuple(int(v) for v in r)
        if len(r) != len(self.center):
            raise DimensionError("radii and center have different lengths")
        if any(v < 0 for v in r):
            raise UsageError("radii must be nonnegative")
        object.__setattr__(self, "radii", r)

    @classmethod
    def ball(cls, center: Sequence[int], r: int, topology: str = "hard-boundary") -> "Window":
        center = tuple(center)
        return cls(center, (r,) * len(center), topology)

    @classmethod
    def from_bounds(cls, lo: Sequence[int], hi: Sequence[int]) -> "Window":
        """Box with corners lo, hi; sides of even length are not representable."""
        lo, hi = np.asarray(lo), np.asarray(hi)
        ext = hi - lo
        if np.any(ext % 2):
            raise UsageError("from_bounds needs odd side lengths")
        return cls(tuple((lo + hi) // 2), tuple(ext // 2))

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.center) - np.asarray(self.radii)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.center) + np.asarray(self.radii)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(2 * r + 1 for r in self.radii)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    def contains(self, x: Sequence[int]) -> bool:
        return all(abs(a - c) <= r for a, c, r in zip(x, self.center, self.radii))

    def index(self, x: Sequence[int]) -> tuple[int, ...]:
        if not self.contains(x):
            raise IndexError(f"site {tuple(x)} outside window {self}")
        return tuple(int(a - c + r) for a, c, r in zip(x, self.center, self.radii))

    def site(self, idx: Sequence[int]) -> Site:
        return tuple(int(i + c - r) for i, c, r in zip(idx, self.center, self.radii))

    def sites(self) -> Iterator[Site]:
        ranges = [range(c - r, c + r + 1) for c, r in zip(self.center, self.radii)]
        return itertools.product(*ranges)

    def enlarge(self, by: int, topology: str | None = None) -> "Window":
        """Minkowski sum with B(0, by)."""
        return Window(self.center, tuple(r + by for r in self.radii), topology or self.topology)


@dataclass
class ClusterLabeling:
    """Component ids over a window. Id 0 means closed; open components are
    numbered 1..n in the lexicographic order of their smallest member."""

    labels: np.ndarray
    sizes: np.ndarray  # sizes[k] = size of component k; sizes[0] = 0
    frame_ids: frozenset[int] = field(default_factory=frozenset)
    window: Window | None = None

    @property
    def count(self) -> int:
        return len(self.sizes) - 1

    def label_of(self, x: Sequence[int]) -> int:
        idx = self.window.index(x) if self.window is not None else tuple(x)
        return int(self.labels[idx])

    def members(self, k: int) -> np.ndarray:
        return np.argwhere(self.labels == k)

    def touches_all_sides(self, k: int, band: int = 1) -> bool:
        """True if component k has a member within `band` cells of every face."""
        lab = self.labels
        for ax in range(lab.ndim):
            lo = np.take(lab, range(0, min(band, lab.shape[ax])), axis=ax)
            hi = np.take(lab, range(max(lab.shape[ax] - band, 0), lab.shape[ax]), axis=ax)
            if not (np.any(lo == k) and np.any(hi == k)):
                return False
        return True


def structure(ndim: int, adjacency: str) -> np.ndarray:
    if adjacency == "l1":
        return ndimage.generate_binary_structure(ndim, 1)
    if adjacency == "linf-star":
        return ndimage.generate_binary_structure(ndim, ndim)
    raise UsageError(f"adjacency must be 'l1' or 'linf-star', got {adjacency!r}")


def canonical_relabel(raw: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Renumber labels 1..n by first occurrence in C order, which is the
    lexicographic order of array indices."""
    flat = raw.ravel()
    nz = np.flatnonzero(flat)
    if n == 0:
        return np.zeros_like(raw, dtype=np.int32), np.zeros(1, dtype=np.int64)
    _, first = np.unique(flat[nz], return_index=True)
    # raw ids are 1..n; first[k-1] is the first flat position of raw id k
    order = np.argsort(nz[first], kind="stable")
    remap = np.zeros(n + 1, dtype=np.int32)
    remap[order + 1] = np.arange(1, n + 1, dtype=np.int32)
    labels = remap[raw]
    sizes = np.bincount(labels.ravel(), minlength=n + 1).astype(np.int64)
    sizes[0] = 0
    return labels, sizes


def label_clusters(open_grid: np.ndarray, adjacency: str = "l1", window: Window | None = None) -> ClusterLabeling:
    grid = np.asarray(open_grid, dtype=bool)
    if window is not None and tuple(window.shape) != grid.shape:
        raise UsageError(f"grid shape {grid.shape} does not match window shape {window.shape}")
    raw, n = ndimage.label(grid, structure=structure(grid.ndim, adjacency))
    labels, sizes = canonical_relabel(raw, n)
    frame = set()
    for ax in range(grid.ndim):
        frame.update(np.unique(np.take(labels, [0, grid.shape[ax] - 1], axis=ax)).tolist())
    frame.discard(0)
    return ClusterLabeling(labels, sizes, frozenset(int(k) for k in frame), window)
