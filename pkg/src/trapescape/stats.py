"""Small statistics helpers used by the experiment reports."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy import stats as sps
from statsmodels.stats.proportion import proportion_confint


@dataclass
class Frequency:
    successes: int
    trials: int
    estimate: float
    lo: float
    hi: float

    @property
    def sigma(self) -> float:
        p = self.estimate
        return math.sqrt(max(p * (1 - p), 0.0) / self.trials) if self.trials else float("nan")

    def as_dict(self) -> dict:
        return asdict(self)


def frequency(successes: int, trials: int, alpha: float = 0.05) -> Frequency:
    if trials <= 0:
        raise ValueError("frequency needs at least one trial")
    lo, hi = proportion_confint(int(successes), int(trials), alpha=alpha, method="wilson")
    return Frequency(int(successes), int(trials), successes / trials, float(lo), float(hi))


def mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("mean of empty sample")
    se = x.std(ddof=1) / math.sqrt(x.size) if x.size > 1 else float("inf")
    return float(x.mean()), float(se)


def within_sigmas(estimate: float, target: float, sigma: float, k: float = 3.0) -> bool:
    return abs(estimate - target) <= k * sigma


def binomial_sigma(p: float, n: int) -> float:
    return math.sqrt(p * (1 - p) / n)


def two_proportion_z(k1: int, n1: int, k2: int, n2: int) -> tuple[float, float]:
    """z statistic and two-sided p-value for equal proportions."""
    p1, p2 = k1 / n1, k2 / n2
    p = (k1 + k2) / (n1 + n2)
    se = math.sqrt(p * (1 - p) * (1 / n1 + 1 / n2))
    if se == 0:
        return 0.0, 1.0
    z = (p1 - p2) / se
    return z, float(2 * sps.norm.sf(abs(z)))


def homogeneity_test(counts_a: dict, counts_b: dict, min_expected: float = 5.0) -> tuple[float, float, int]:
    """Chi-square test that two samples of categories share one law.

    Categories whose pooled expected count is below `min_expected` in either
    row are merged into one bucket. Returns (statistic, p-value, dof).
    """
    keys = sorted(set(counts_a) | set(counts_b), key=repr)
    a = np.array([counts_a.get(k, 0) for k in keys], dtype=float)
    b = np.array([counts_b.get(k, 0) for k in keys], dtype=float)
    na, nb = a.sum(), b.sum()
    pooled = (a + b) / (na + nb)
    small = (pooled * min(na, nb)) < min_expected
    if small.any():
        a = np.append(a[~small], a[small].sum())
        b = np.append(b[~small], b[small].sum())
    keep = (a + b) > 0
    table = np.vstack([a[keep], b[keep]])
    if table.shape[1] < 2:
        return 0.0, 1.0, 0
    stat, p, dof, _ = sps.chi2_contingency(table, correction=False)
    return float(stat), float(p), int(dof)


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def normalize(counts: dict) -> dict:
    n = sum(counts.values())
    return {k: v / n for k, v in counts.items()} if n else {}
