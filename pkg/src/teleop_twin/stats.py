"""Nonparametric tests: Friedman omnibus, Wilcoxon signed-rank, Holm step-down."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

EXACT_MAX_N = 12


class DegenerateInput(ValueError):
    pass


class AllZeroDifferences(ValueError):
    pass


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p: float
    df: Optional[int] = None
    n: int = 0
    n_zero: int = 0
    exact: bool = False
    note: str = ""

    __test__ = False  # not a pytest class


# -- special functions ------------------------------------------------------


def _gamma_series(a: float, x: float) -> float:
    """Lower regularized gamma P(a, x) by series; good for x < a + 1."""
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(10_000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * 1e-16:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cf(a: float, x: float) -> float:
    """Upper regularized gamma Q(a, x) by modified Lentz continued fraction; x >= a + 1."""
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gammaincc(a: float, x: float) -> float:
    """Upper regularized incomplete gamma Q(a, x)."""
    if a <= 0:
        raise ValueError("a must be > 0")
    if x <= 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cf(a, x)


def chi2_sf(x: float, df: int) -> float:
    return min(1.0, max(0.0, gammaincc(df / 2.0, x / 2.0)))


def norm_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def rankdata(values: Sequence[float]) -> List[float]:
    """1-based ranks with ties given their average rank."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def _tie_sizes(values: Sequence[float]) -> List[int]:
    counts = {}
    for v in values:
        counts[v] = counts.get(v, 0) + 1
    return [c for c in counts.values() if c > 1]


# -- tests ------------------------------------------------------------------


def friedman(matrix: Sequence[Sequence[float]]) -> TestResult:
    """Friedman chi-square over n subjects (rows) x k conditions (columns), tie-corrected."""
    n = len(matrix)
    if n < 2:
        raise DegenerateInput(f"need >= 2 subjects, got {n}")
    k = len(matrix[0])
    if k < 2 or any(len(row) != k for row in matrix):
        raise DegenerateInput("need a rectangular matrix with >= 2 conditions")
    if not all(math.isfinite(v) for row in matrix for v in row):
        raise DegenerateInput("non-finite values")

    rank_sums = [0.0] * k
    tie_term = 0
    for row in matrix:
        for j, r in enumerate(rankdata(row)):
            rank_sums[j] += r
        tie_term += sum(t**3 - t for t in _tie_sizes(row))

    chi2 = 12.0 / (n * k * (k + 1)) * sum(r * r for r in rank_sums) - 3.0 * n * (k + 1)
    correction = 1.0 - tie_term / (n * (k**3 - k))
    if correction <= 0.0:
        return TestResult(0.0, 1.0, k - 1, n, note="every subject tied across all conditions")
    chi2 = max(0.0, chi2 / correction)
    return TestResult(chi2, chi2_sf(chi2, k - 1), k - 1, n)


def _exact_signed_rank_p(ranks: Sequence[float], w_plus: float) -> float:
    n = len(ranks)
    total = 1 << n
    le = ge = 0
    # ranks are multiples of 0.5, so compare on doubled integers
    target = round(2 * w_plus)
    doubled = [round(2 * r) for r in ranks]
    for signs in itertools.product((0, 1), repeat=n):
        w = sum(r for r, s in zip(doubled, signs) if s)
        if w <= target:
            le += 1
        if w >= target:
            ge += 1
    return min(1.0, 2.0 * min(le, ge) / total)


def wilcoxon_signed_rank(pairs: Sequence[Tuple[float, float]]) -> TestResult:
    """Two-sided paired signed-rank test on the change ``b - a`` of each pair.

    Zero differences are dropped. Exact enumeration of sign patterns for
    n <= 12, otherwise the tie-corrected normal approximation with continuity
    correction. ``statistic`` is Z without continuity correction, signed like
    the direction of change.
    """
    diffs = [b - a for a, b in pairs]
    nonzero = [d for d in diffs if d != 0]
    n_zero = len(diffs) - len(nonzero)
    n = len(nonzero)
    if n == 0:
        raise AllZeroDifferences(f"all {len(diffs)} paired differences are zero")

    ranks = rankdata([abs(d) for d in nonzero])
    w_plus = sum(r for r, d in zip(ranks, nonzero) if d > 0)
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - sum(t**3 - t for t in _tie_sizes([abs(d) for d in nonzero])) / 48.0
    sd = math.sqrt(var)
    z = (w_plus - mean) / sd if sd > 0 else 0.0

    if n <= EXACT_MAX_N:
        p = _exact_signed_rank_p(ranks, w_plus)
        exact = True
    else:
        zc = max(0.0, abs(w_plus - mean) - 0.5) / sd
        p = min(1.0, 2.0 * norm_sf(zc))
        exact = False
    return TestResult(z, p, None, n, n_zero, exact)


def holm_correct(p_values: Sequence[float]) -> List[float]:
    m = len(p_values)
    if any(not 0.0 <= p <= 1.0 for p in p_values):
        raise ValueError("p-values must lie in [0, 1]")
    order = sorted(range(m), key=lambda i: p_values[i])
    adjusted = [0.0] * m
    running = 0.0
    for j, i in enumerate(order):
        running = max(running, min(1.0, (m - j) * p_values[i]))
        adjusted[i] = running
    return adjusted


def signed_rank_pattern(pairs: Sequence[Tuple[float, float]]) -> Tuple[float, ...]:
    """Signed ranks per subject; equal patterns give identical test outcomes."""
    diffs = [b - a for a, b in pairs]
    nonzero_idx = [i for i, d in enumerate(diffs) if d != 0]
    ranks = rankdata([abs(diffs[i]) for i in nonzero_idx])
    pattern = [0.0] * len(diffs)
    for r, i in zip(ranks, nonzero_idx):
        pattern[i] = math.copysign(r, diffs[i])
    return tuple(pattern)
