import math

import numpy as np
import pytest

from trapescape.rng import as_generator, stream
from trapescape.stats import frequency, homogeneity_test, mean_se, total_variation, two_proportion_z


def test_streams_reproducible_and_distinct():
    a = stream(7, 3).random(5)
    assert np.array_equal(a, stream(7, 3).random(5))
    assert not np.array_equal(a, stream(7, 4).random(5))
    assert not np.array_equal(a, stream(8, 3).random(5))
    assert np.array_equal(as_generator((7, 3)).random(5), a)


def test_wilson_limits():
    f = frequency(0, 1000)
    assert f.lo == pytest.approx(0.0, abs=1e-15)
    assert f.hi == pytest.approx(3.84 / 1000, rel=0.02)
    g = frequency(50, 50)
    assert g.hi == pytest.approx(1.0) and g.lo < 1


def test_wilson_calibration():
    rng = stream(1, 0)
    p, n, reps = 0.2, 200, 2000
    k = rng.binomial(n, p, size=reps)
    cover = np.mean([frequency(int(x), n).lo <= p <= frequency(int(x), n).hi for x in k])
    assert abs(cover - 0.95) < 3 * math.sqrt(0.95 * 0.05 / reps) + 0.005


def test_frequency_errors():
    with pytest.raises(ValueError):
        frequency(0, 0)
    with pytest.raises(ValueError):
        mean_se([])


def test_small_helpers():
    m, se = mean_se([1.0, 2.0, 3.0])
    assert m == 2.0 and se == pytest.approx(1 / math.sqrt(3))
    assert two_proportion_z(5, 10, 5, 10)[0] == 0.0
    assert total_variation({"a": 0.5, "b": 0.5}, {"a": 1.0}) == 0.5
    stat, p, dof = homogeneity_test({"a": 500, "b": 500}, {"a": 500, "b": 500})
    assert stat == 0.0 and p == pytest.approx(1.0) and dof == 1
