import math

import numpy as np
import pytest
from scipy import stats as sps

from trapescape.errors import ParameterError, RangeError, ResourceError
from trapescape.lattice import Window
from trapescape.rng import stream
from trapescape.trap_env import TrapField, dump, load, sample_field


def test_single_site_vacancy_law():
    n, u = 20000, 0.7
    rng = stream(3, 0)
    vac = sum(sample_field(2, u, Window.ball((0, 0), 0), 0, rng).occupancy((0, 0), 0) == 0 for _ in range(n))
    p = math.exp(-u)
    assert abs(vac / n - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_zero_intensity():
    f = sample_field(2, 0.0, Window.ball((0, 0), 3), 4, seed=1)
    assert f.n_traps == 0 and not f.occupancy_grid().any()


def test_parameter_errors():
    with pytest.raises(ParameterError):
        sample_field(2, -1.0, Window.ball((0, 0), 3), 4)
    with pytest.raises(ParameterError):
        sample_field(2, 1.0, Window.ball((0, 0), 3), -1)
    with pytest.raises(ResourceError, match="at least"):
        sample_field(2, 1.0, Window.ball((0, 0), 100), 100, budget=1000)


def test_manual_trap_and_range():
    w = Window.ball((0, 0), 2)
    f = TrapField.from_traps(w, 3, [(1, -1)])
    assert f.occupancy((1, -1), 0) == 1 and f.occupancy((1, -1), 3) == 1
    assert f.occupancy((0, 0), 0) == 0
    with pytest.raises(RangeError):
        f.occupancy((3, 0), 0)
    with pytest.raises(RangeError):
        f.occupancy((0, 0), 4)


def _replay(f: TrapField) -> np.ndarray:
    """Occupancy rebuilt trap by trap and step by step."""
    grid = np.zeros((f.T + 1, *f.window.shape), dtype=bool)
    c = np.asarray(f.window.center)
    for k in range(f.n_traps):
        for t in range(f.T + 1):
            x = tuple(int(v) for v in f.positions[t, k] + c)
            if f.window.contains(x):
                grid[(t, *f.window.index(x))] = True
    return grid


def test_occupancy_matches_replay():
    for i in range(100):
        rng = stream(5, i)
        u = float(rng.uniform(0.05, 0.5))
        f = sample_field(2, u, Window.ball((0, 0), 3), 4, rng)
        assert np.array_equal(f.occupancy_grid(), _replay(f))


def test_steps_are_unit_and_local():
    f = sample_field(2, 0.5, Window.ball((0, 0), 5), 6, seed=9)
    step = np.abs(np.diff(f.positions.astype(int), axis=0)).sum(axis=2)
    assert np.all(step == 1)
    # one-step locality: an occupied site at t+1 was reached from a neighbour at t
    grid = f.occupancy_grid()
    for t in range(f.T):
        for x in zip(*np.nonzero(grid[t + 1])):
            site = f.window.site(x)
            rel = np.asarray(site) - np.asarray(f.window.center)
            movers = np.all(f.positions[t + 1] == rel, axis=1)
            prev = f.positions[t][movers].astype(int)
            assert np.all(np.abs(prev - rel).sum(axis=1) == 1)


@pytest.mark.slow
def test_stationary_vacancy_at_horizon():
    n, u = 10000, 1.0
    w = Window.ball((0, 0), 20)
    vac = 0
    for i in range(n):
        f = sample_field(2, u, w, 50, stream(11, i))
        vac += f.occupancy((7, -3), 50) == 0
    p = math.exp(-u)
    assert abs(vac / n - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_disjoint_counts_poisson():
    # counts of traps on two disjoint sets at t = T are independent Poisson
    n, u = 3000, 0.4
    A = [(0, 0), (0, 1), (1, 0)]
    B = [(-3, -3), (-3, -2)]
    ca, cb = np.zeros(n, int), np.zeros(n, int)
    for i in range(n):
        f = sample_field(2, u, Window.ball((0, 0), 3), 3, stream(12, i))
        pos = [tuple(p) for p in f.positions[3].astype(int)]
        ca[i] = sum(p in A for p in pos)
        cb[i] = sum(p in B for p in pos)
    for c, m in ((ca, 3 * u), (cb, 2 * u)):
        k = np.arange(5)
        obs = np.append([np.sum(c == j) for j in k], np.sum(c >= 5))
        exp = n * np.append(sps.poisson.pmf(k, m), sps.poisson.sf(4, m))
        assert sps.chisquare(obs, exp).pvalue > 0.001
    r = np.corrcoef(ca, cb)[0, 1]
    assert abs(r) < 4 / math.sqrt(n)


def test_thinning_is_monotone():
    w = Window.ball((0, 0), 6)
    hi = sample_field(2, 0.8, w, 5, seed=4)
    lo = sample_field(2, 0.3, w, 5, seed=4, u_max=0.8)
    assert np.all(lo.occupancy_grid() <= hi.occupancy_grid())
    assert np.array_equal(lo.occupancy_grid(), hi.thin(0.3).occupancy_grid())


def test_dump_roundtrip(tmp_path):
    f = sample_field(2, 0.3, Window.ball((1, 1), 3), 2, seed=5)
    path = tmp_path / "f.json"
    dump(f, path)
    header, grid = load(path)
    assert header["seed"] == 5 and header["T"] == 2
    assert np.array_equal(grid, f.occupancy_grid())
