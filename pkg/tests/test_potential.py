import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from trapescape.errors import DimensionError, UnsamplableError
from trapescape.lattice import jumps
from trapescape.potential import (absorb_walk, capacity, conditioned_backward_sampler, equilibrium, first_step_law,
                                  green, green_exact, hit_probability_last_exit, hitting_law, lclt_constant,
                                  reflect_capacity_check)
from trapescape.rng import stream
from trapescape.stats import normalize, total_variation

WORKED = [(0, 0, 0), (1, 0, 1)]


def green_by_paths(x, y, d):
    """Enumerate all upward paths of length y_d - x_d."""
    n = y[-1] - x[-1]
    if n < 0:
        return Fraction(0)
    J = jumps(d)
    hits = 0
    for seq in itertools.product(J, repeat=n):
        end = tuple(a + sum(s[i] for s in seq) for i, a in enumerate(x))
        hits += end == tuple(y)
    return Fraction(hits, len(J) ** n)


def test_green_examples():
    assert green_exact((0, 0, 0), (0, 0, 0), 3) == 1
    assert green_exact((0, 0, 0), (0, 0, 1), 3) == 0
    assert green_exact((0, 0, 0), (0, 0, 2), 3) == Fraction(1, 4)
    assert green_exact((0, 0, 0), (1, 0, 1), 3) == Fraction(1, 4)
    assert green_exact((0, 0, 5), (0, 0, 3), 3) == 0
    with pytest.raises(DimensionError):
        green((0, 0), (0, 1), 2)


@pytest.mark.parametrize("d", [3, 4])
def test_green_against_path_enumeration(d):
    rng = stream(2, d)
    for _ in range(40):
        n = int(rng.integers(0, 5 if d == 3 else 4))
        y = tuple(int(c) for c in rng.integers(-3, 4, size=d - 1)) + (n,)
        assert green_exact((0,) * d, y, d) == green_by_paths((0,) * d, y, d)


def test_worked_equilibrium():
    t = equilibrium(WORKED)
    assert t.e_K((0, 0, 0)) == pytest.approx(1.0, abs=1e-15)
    assert t.e_K((1, 0, 1)) == pytest.approx(0.75, abs=1e-15)
    assert t.cap == pytest.approx(1.75, abs=1e-15)
    assert sum(t.e_tilde) == pytest.approx(1.0)
    assert reflect_capacity_check(WORKED) == pytest.approx((1.75, 1.75, 1.75), abs=1e-15)


def test_singleton_and_spatial_sets():
    assert capacity([(4, -2, 7)]) == 1.0
    assert capacity([(0, 0, 0), (5, 5, 0), (-3, 7, 0)]) == pytest.approx(3.0, abs=1e-15)
    assert reflect_capacity_check([(1, 2, 3)]) == (1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        equilibrium([])


def test_spatial_capacity_random():
    rng = stream(3, 0)
    for _ in range(30):
        k = int(rng.integers(1, 15))
        A = {tuple(int(c) for c in rng.integers(-6, 7, size=2)) for _ in range(k)}
        K = [a + (2,) for a in A]
        assert capacity(K) == pytest.approx(len(A), abs=1e-12)


def test_reflection_triple_random():
    rng = stream(4, 0)
    for _ in range(50):
        K = {tuple(int(c) for c in rng.integers(0, 5, size=3)) for _ in range(rng.integers(1, 9))}
        a, b, c = reflect_capacity_check(K)
        assert abs(a - b) <= 1e-12 and abs(a - c) <= 1e-12


def escape_by_recursion(K, d):
    """Independent oracle: e_K(x) by memoised recursion over downward steps."""
    K = {tuple(x) for x in K}
    lo = min(x[-1] for x in K)
    J = jumps(d, -1)
    memo = {}

    def h(z):  # P_z^-(H_K = inf)
        if z in K:
            return 0.0
        if z[-1] < lo:
            return 1.0
        if z not in memo:
            memo[z] = sum(h(tuple(a + b for a, b in zip(z, j))) for j in J) / len(J)
        return memo[z]

    return {x: sum(h(tuple(a + b for a, b in zip(x, j))) for j in J) / len(J) for x in K}


def test_equilibrium_against_recursion():
    rng = stream(5, 0)
    for _ in range(20):
        K = {tuple(int(c) for c in rng.integers(0, 4, size=3)) for _ in range(rng.integers(1, 7))}
        e = equilibrium(K).equilibrium_measure()
        ref = escape_by_recursion(K, 3)
        for x in K:
            assert e[x] == pytest.approx(ref[x], abs=1e-12)


def test_capacity_monotone_unit_increments():
    rng = stream(6, 0)
    for _ in range(200):
        K = [tuple(int(c) for c in rng.integers(0, 5, size=3)) for _ in range(rng.integers(1, 7))]
        y = tuple(int(c) for c in rng.integers(0, 5, size=3))
        a, b = capacity(K), capacity(K + [y])
        assert a - 1e-12 <= b <= a + 1 + 1e-12


def test_e_support_notion():
    # a vertical column is jump-thin: every site escapes, including l1-interior ones
    col = [(0, 0, t) for t in range(5)]
    e = equilibrium(col).equilibrium_measure()
    assert all(v > 0 for v in e.values())
    # a solid box: only sites with a downward jump leaving the box can carry mass
    box = list(itertools.product(range(3), range(3), range(3)))
    e = equilibrium(box).equilibrium_measure()
    Kset = set(box)
    for x, v in e.items():
        exposed = any(tuple(a + b for a, b in zip(x, j)) not in Kset for j in jumps(3, -1))
        assert (v > 0) == exposed


def test_hitting_law_examples():
    assert hitting_law((0, 0, 5), [(0, 0, 1)], 3) == ({}, 0.0)
    law, p = hitting_law((0, 0, 0), [(1, 0, 1)], 3)
    assert p == pytest.approx(0.25)
    law, p = hitting_law((0, 0, 0), [(1, 1, 1)], 3)
    assert p == 0.0


def test_hitting_two_formulations():
    rng = stream(7, 0)
    for _ in range(30):
        S = {tuple(int(c) for c in rng.integers(0, 4, size=2)) + (int(rng.integers(2, 6)),)
             for _ in range(rng.integers(1, 6))}
        x = (int(rng.integers(0, 4)), int(rng.integers(0, 4)), 0)
        law, p = hitting_law(x, S, 3)
        assert sum(law.values()) == pytest.approx(p, abs=1e-12)
        assert p == pytest.approx(hit_probability_last_exit(x, S, 3), abs=1e-12)


def test_reversal_identity():
    # P_z^+(X at first hit of S or exit of V equals y) = P_y^-(... equals z)
    from trapescape.lattice import Window
    S = [(0, 0, 0), (1, 1, 0), (-1, 0, 1)]
    V = Window.ball((0, 0, 0), 3)
    from trapescape.potential import BoxUnion, SiteSet
    outer = [(x, y, -4) for x in range(-3, 4) for y in range(-3, 4)]
    for z in outer[::5]:
        up = absorb_walk(z, 3, +1, target=SiteSet(S), stay=BoxUnion([V]))
        for y in S:
            down = absorb_walk(y, 3, -1, target=SiteSet(S), stay=BoxUnion([V]))
            assert up.hits.get(y, 0.0) == pytest.approx(down.exits.get(z, 0.0), abs=1e-13)


def test_mass_conservation():
    res = absorb_walk((0, 0, 0), 3, +1, target=[(1, 0, 3), (0, 0, 2)], n_steps=6)
    assert np.allclose(res.level_mass, 1.0, atol=1e-12)


def test_first_step_law_worked():
    law = first_step_law((1, 0, 1), WORKED)
    assert law[(0, 0, 0)] == 0.0
    for y, p in law.items():
        if y != (0, 0, 0):
            assert p == pytest.approx(1 / 3)


def test_conditioned_sampler_singleton_uniform():
    from scipy import stats as sps
    n = 20000
    counts = {}
    rng = stream(8, 0)
    for _ in range(n):
        path = conditioned_backward_sampler((0, 0, 0), [(0, 0, 0)], -1, rng)
        counts[path[1]] = counts.get(path[1], 0) + 1
    assert len(counts) == 4
    assert sps.chisquare(list(counts.values())).pvalue > 0.001


def test_conditioned_sampler_unsamplable():
    # (1,0,1) lies in the middle of a column shielded by its neighbours below
    K = [(1, 0, 1)] + [(a, b, 0) for a, b in ((0, 0), (2, 0), (1, 1), (1, -1))]
    with pytest.raises(UnsamplableError):
        conditioned_backward_sampler((1, 0, 1), K, -2, seed=0)


def test_conditioned_sampler_vs_rejection():
    K = [(0, 0, 0), (1, 0, 1), (0, 1, 2), (1, 1, 1)]
    x, stop = (0, 1, 2), -1
    n = 100000
    rng = stream(9, 0)
    cond = {}
    from trapescape.potential import cached_equilibrium, sample_backward
    tab = cached_equilibrium(K)
    pos = sample_backward(tab, np.tile(x[:-1], (n, 1)), np.full(n, x[-1]), stop, rng)
    for p in map(tuple, pos[:, 0]):
        cond[p] = cond.get(p, 0) + 1
    # rejection: free downward walks, keep those avoiding K after time 0
    J = np.asarray([j[:-1] for j in jumps(3, -1)])
    Kset = {tuple(k) for k in K}
    rej = {}
    kept = 0
    m = 3 * n
    cur = np.tile(np.asarray(x[:-1]), (m, 1))
    ok = np.ones(m, bool)
    for t in range(x[-1] - 1, stop - 1, -1):
        cur = cur + J[rng.integers(0, 4, size=m)]
        hitK = np.array([tuple(c) + (t,) in Kset for c in cur])
        ok &= ~hitK
    for c in map(tuple, cur[ok]):
        rej[c] = rej.get(c, 0) + 1
        kept += 1
    assert kept > 10000
    assert total_variation(normalize(cond), normalize(rej)) < 0.01


def test_lclt_values():
    r = lclt_constant(3, 2)
    assert r.per_height[0] == pytest.approx(0.25)
    assert r.per_height[1] == pytest.approx(0.5)
    assert r.central


def test_lclt_saturation_and_green_bound():
    r = lclt_constant(3, 1024)
    assert np.all(np.diff(r.running) >= 0)
    assert (r.running[-1] - r.running[511]) / r.running[-1] < 0.01
    c = r.estimate
    rng = stream(10, 0)
    for _ in range(200):
        n = int(rng.integers(1, 40))
        y = tuple(int(v) for v in rng.integers(-4, 5, size=2)) + (n,)
        assert green((0, 0, 0), y, 3) * n <= c + 1e-15


def test_lclt_d4_central():
    r = lclt_constant(4, 12)
    assert r.central and np.all(np.diff(r.running) >= 0)
