import itertools

import networkx as nx
import numpy as np
import pytest

from trapescape.errors import DimensionError, UsageError
from trapescape.lattice import (Window, boundary, interior, jumps, label_clusters, linf, neighbors, radius,
                                set_distance)


def test_l1_neighbors_origin():
    assert set(neighbors((0, 0), "l1")) == {(1, 0), (-1, 0), (0, 1), (0, -1)}


def test_upward_jumps_d3():
    assert set(neighbors((0, 0, 0), "upward-J")) == {(1, 0, 1), (-1, 0, 1), (0, 1, 1), (0, -1, 1)}


def test_star_neighbors():
    nb = neighbors((0, 0), "linf-star")
    assert len(nb) == 8 and all(linf(y, (0, 0)) == 1 for y in nb)


@pytest.mark.parametrize("d", [3, 4, 5])
def test_jump_sets_are_negations(d):
    x = tuple(range(d))
    up = neighbors(x, "upward-J")
    down = neighbors(x, "downward-J")
    assert len(up) == 2 * (d - 1)
    assert {tuple(2 * a - b for a, b in zip(x, y)) for y in up} == set(down)


def test_neighbor_errors():
    with pytest.raises(UsageError):
        neighbors((0, 0), "diagonal")
    with pytest.raises(DimensionError):
        neighbors((0, 0), "upward-J")
    with pytest.raises(DimensionError):
        jumps(2)


def test_boundary_examples():
    assert boundary({(0, 0, 0)}, "inner") == {(0, 0, 0)}
    assert boundary({(0, 0, 0)}, "outer") == set(neighbors((0, 0, 0)))
    box = set(Window.ball((0, 0), 1).sites())
    assert boundary(box, "inner") == box - {(0, 0)}
    # brute force: sites at l1 distance one from the box, 3 per side
    outer = {(i, j) for i in range(-3, 4) for j in range(-3, 4) if (i, j) not in box
             and any((i + a, j + b) in box for a, b in ((1, 0), (-1, 0), (0, 1), (0, -1)))}
    assert len(outer) == 12
    assert boundary(box, "outer") == outer
    assert boundary(set(), "inner") == set() and boundary(set(), "outer") == set()
    assert interior(box) == {(0, 0)}


def test_boundary_duality(rng):
    # outer boundary of K is the inner boundary of its complement, inside a window
    # large enough to hold K and its neighbours
    win = Window.ball((0, 0), 6)
    for _ in range(100):
        K = {tuple(int(c) for c in rng.integers(-4, 5, size=2)) for _ in range(rng.integers(1, 20))}
        comp = {x for x in win.sites() if x not in K}
        inner_comp = {x for x in comp if any(y in K for y in neighbors(x))}
        assert boundary(K, "outer") == inner_comp


def test_distance_and_radius():
    assert set_distance([(0, 0)], [(3, -5)]) == 5
    assert radius([(0, 0, 0)]) == 0
    assert radius(list(Window.ball((1, 2, 3), 2).sites())) == 2


def test_window_index_roundtrip():
    w = Window((1, -2), (2, 3))
    assert w.shape == (5, 7)
    for x in w.sites():
        assert w.site(w.index(x)) == x
    with pytest.raises(IndexError):
        w.index((4, 0))
    assert w.enlarge(2).radii == (4, 5)


def test_label_trivial():
    lab = label_clusters(np.ones((7, 7), bool))
    assert lab.count == 1 and lab.sizes[1] == 49
    assert label_clusters(np.zeros((7, 7), bool)).count == 0


def _nx_components(grid, star=False):
    G = nx.Graph()
    sites = [tuple(i) for i in np.argwhere(grid)]
    G.add_nodes_from(sites)
    steps = [s for s in itertools.product((-1, 0, 1), repeat=grid.ndim) if any(s)]
    if not star:
        steps = [s for s in steps if sum(map(abs, s)) == 1]
    S = set(sites)
    for x in sites:
        for s in steps:
            y = tuple(a + b for a, b in zip(x, s))
            if y in S:
                G.add_edge(x, y)
    return list(nx.connected_components(G))


@pytest.mark.parametrize("adjacency", ["l1", "linf-star"])
def test_label_matches_flood_fill(adjacency, rng):
    grid = rng.random((64, 64)) < 0.5
    lab = label_clusters(grid, adjacency)
    comps = _nx_components(grid, adjacency == "linf-star")
    assert lab.count == len(comps)
    assert sorted(lab.sizes[1:].tolist()) == sorted(len(c) for c in comps)
    assert lab.sizes.sum() == grid.sum()
    for c in comps:
        ids = {int(lab.labels[x]) for x in c}
        assert len(ids) == 1


def test_label_ids_canonical(rng):
    grid = rng.random((30, 30)) < 0.55
    lab = label_clusters(grid)
    # id k is the component whose smallest member comes k-th in lexicographic order
    firsts = [tuple(lab.members(k)[0]) for k in range(1, lab.count + 1)]
    assert firsts == sorted(firsts)
    # relabeling is value-semantic: a transposed-back transposed grid gives the same ids
    again = label_clusters(grid.T.copy().T)
    assert np.array_equal(lab.labels, again.labels)


def test_frame_ids_and_sides():
    g = np.zeros((5, 5), bool)
    g[2, :] = True
    g[0, 0] = True
    lab = label_clusters(g)
    assert lab.frame_ids == {1, 2}
    assert not lab.touches_all_sides(lab.labels[2, 2])
    g[:, 2] = True
    lab = label_clusters(g)
    assert lab.touches_all_sides(lab.labels[2, 2])


def test_label_shape_mismatch():
    with pytest.raises(UsageError):
        label_clusters(np.ones((3, 3)), window=Window.ball((0, 0), 2))
