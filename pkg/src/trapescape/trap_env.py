"""Moving-trap environment on Z^m x {0..T}.

Traps start as a Poisson field of intensity u and each performs an
independent discrete-time simple random walk. Only a finite query window is
ever observed; traps are sampled on the window enlarged by T, since a trap
starting farther out cannot reach the window within T steps. The restriction
to the window is therefore exactly distributed as in the infinite model.

Each trap carries a uniform mark in (0, 1]. Keeping the traps with
mark <= u / u_max turns one field at intensity u_max into a field at
intensity u, and the fields are nested in u.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, RangeError, ResourceError
from .lattice import Window, unit_vectors
from .rng import as_generator

DEFAULT_BUDGET = 50_000_000  # sites of the enlarged box
FORMAT = "trapescape-field/1"


@dataclass(frozen=True, eq=False)
class TrapField:
    spatial_dim: int
    u: float
    T: int
    window: Window
    positions: np.ndarray  # (T+1, n, m) offsets from window.center, int16 or int32
    marks: np.ndarray = field(repr=False)  # (n,) uniform in (0, 1]
    u_max: float | None = None
    seed: object = None

    @property
    def n_traps(self) -> int:
        return self.positions.shape[1]

    @property
    def enlarged(self) -> Window:
        return self.window.enlarge(self.T, topology="exact-truncation")

    def _check(self, x, t):
        if not (0 <= t <= self.T) or len(x) != self.spatial_dim or not self.window.contains(x):
            raise RangeError(f"({tuple(x)}, {t}) outside window {self.window.center}+-{self.window.radii} x [0, {self.T}]")

    def occupancy(self, x, t: int) -> int:
        self._check(x, t)
        rel = np.asarray(x) - np.asarray(self.window.center)
        return int(np.any(np.all(self.positions[t] == rel, axis=1)))

    def occupied_grid(self, t: int) -> np.ndarray:
        """Boolean occupancy over the window at time t."""
        if not 0 <= t <= self.T:
            raise RangeError(f"time {t} outside [0, {self.T}]")
        grid = np.zeros(self.window.shape, dtype=bool)
        p = self.positions[t].astype(np.int64) + np.asarray(self.window.radii)
        ok = np.all((p >= 0) & (p < np.asarray(self.window.shape)), axis=1)
        grid[tuple(p[ok].T)] = True
        return grid

    def vacancy(self, t: int) -> np.ndarray:
        return ~self.occupied_grid(t)

    def occupancy_grid(self) -> np.ndarray:
        """Full occupancy over window x {0..T}, shape (T+1, *window.shape)."""
        return np.stack([self.occupied_grid(t) for t in range(self.T + 1)])

    def thin(self, u: float) -> "TrapField":
        """The coupled field at a lower intensity u <= self.u."""
        if u < 0 or u > self.u:
            raise ParameterError(f"thinning needs 0 <= u <= {self.u}, got {u}")
        keep = self.marks * self.u <= u
        return TrapField(self.spatial_dim, u, self.T, self.window, np.ascontiguousarray(self.positions[:, keep]),
                         self.marks[keep] * self.u / u if u > 0 else self.marks[keep], self.u_max, self.seed)

    @classmethod
    def from_traps(cls, window: Window, T: int, initial, moves=None, u: float = 1.0) -> "TrapField":
        """Field built from explicit traps: initial absolute positions (n, m)
        and per-step unit moves (T, n, m). `u` is a nominal intensity; every
        trap gets mark 1, so all of them are seen at level u."""
        initial = np.asarray(initial, dtype=np.int64).reshape(-1, window.dim)
        n = len(initial)
        moves = np.zeros((T, n, window.dim), dtype=np.int64) if moves is None else np.asarray(moves, dtype=np.int64)
        if moves.shape != (T, n, window.dim) or np.any(np.abs(moves).sum(axis=2) > 1):
            raise ParameterError("moves must have shape (T, n, m) with unit l1 steps (or 0 for a parked trap)")
        pos = np.empty((T + 1, n, window.dim), dtype=np.int64)
        pos[0] = initial - np.asarray(window.center)
        if T:
            pos[1:] = pos[0] + np.cumsum(moves, axis=0)
        return cls(window.dim, float(u), T, window, pos, np.ones(n))


def sample_field(spatial_dim: int, u: float, window: Window, T: int, seed=None,
                 u_max: float | None = None, budget: int = DEFAULT_BUDGET) -> TrapField:
    """Sample the trap environment observed on window x {0..T}.

    With u_max given, a field at intensity u_max is drawn from the seed and
    thinned to u, so calls with the same (seed, u_max) are coupled.
    """
    if u < 0 or not np.isfinite(u):
        raise ParameterError(f"intensity must be >= 0, got {u}")
    if T < 0:
        raise ParameterError(f"horizon must be >= 0, got {T}")
    if window.dim != spatial_dim:
        raise ParameterError(f"window has dimension {window.dim}, expected {spatial_dim}")
    if spatial_dim < 1:
        raise ParameterError("spatial_dim must be >= 1")
    top = u if u_max is None else u_max
    if top < u:
        raise ParameterError(f"u={u} exceeds u_max={top}")
    big = window.enlarge(T, topology="exact-truncation")
    if big.size > budget:
        raise ResourceError(f"enlarged box has {big.size} sites, budget {budget}; raise the budget to at least {big.size}")
    rng = as_generator(seed)
    n = int(rng.poisson(top * big.size))
    reach = max(big.radii)
    dtype = np.int16 if reach < 2 ** 15 - 1 else np.int32
    m = spatial_dim
    # conditionally on the count, Poisson points are i.i.d. uniform
    start = np.column_stack([rng.integers(-r, r + 1, size=n) for r in big.radii]).astype(dtype) if n else np.zeros((0, m), dtype)
    marks = 1.0 - rng.random(n)
    pos = np.empty((T + 1, n, m), dtype=dtype)
    pos[0] = start
    if T and n:
        units = np.asarray(unit_vectors(m), dtype=dtype)
        for t in range(T):
            pos[t + 1] = pos[t] + units[rng.integers(0, 2 * m, size=n)]
    f = TrapField(spatial_dim, float(top), T, window, pos, marks, u_max, seed)
    return f.thin(u) if u < top else f


def occupancy(field: TrapField, x, t: int) -> int:
    return field.occupancy(x, t)


def dump(field: TrapField, path) -> None:
    """Write a replay file: JSON header plus base64 packed occupancy bits
    (C order over (t, x_1, ..., x_m))."""
    grid = field.occupancy_grid()
    header = {
        "format": FORMAT,
        "spatial_dim": field.spatial_dim,
        "u": field.u,
        "u_max": field.u_max,
        "seed": field.seed if isinstance(field.seed, (int, type(None))) else list(field.seed),
        "T": field.T,
        "window": {"center": list(field.window.center), "radii": list(field.window.radii)},
        "shape": list(grid.shape),
        "occupancy": base64.b64encode(np.packbits(grid.ravel()).tobytes()).decode("ascii"),
    }
    with open(path, "w") as fh:
        json.dump(header, fh, sort_keys=True)


def load(path) -> tuple[dict, np.ndarray]:
    with open(path) as fh:
        header = json.load(fh)
    if header.get("format") != FORMAT:
        raise ParameterError(f"unknown field format {header.get('format')!r}")
    shape = tuple(header["shape"])
    bits = np.unpackbits(np.frombuffer(base64.b64decode(header.pop("occupancy")), dtype=np.uint8))
    return header, bits[: int(np.prod(shape))].reshape(shape).astype(bool)
