"""Log replay and condition comparison (Friedman omnibus, Wilcoxon follow-ups)."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from ..metrics import MetricsReport, compute_report
from ..stats import (
    AllZeroDifferences,
    DegenerateInput,
    TestResult,
    friedman,
    holm_correct,
    signed_rank_pattern,
    wilcoxon_signed_rank,
)
from ..vec import Vec3
from .runlog import RunLog

COMPARED_METRICS = (
    "T", "L", "v_mean", "speed_sd", "tau_coll", "n_puncture",
    "d_mean_L", "d_mean_R", "rho_sub_mm", "min_d_L", "min_d_R",
)


class UnpairedInput(ValueError):
    pass


def replay_metrics(log: RunLog, apex: Optional[Vec3] = None) -> MetricsReport:
    """Metrics of a run log; the apex defaults to the one recorded in its header."""
    if apex is None:
        apex = log.apex
    meta = {k: log.header[k] for k in ("scenario", "seed", "config_sha256") if k in log.header}
    return compute_report(log.samples, apex, meta)


@dataclass(frozen=True)
class PairwiseResult:
    a: str
    b: str
    z: float
    p: float
    p_holm: float
    n: int
    exact: bool
    direction: str


@dataclass(frozen=True)
class MetricRow:
    metric: str
    friedman: Optional[TestResult]
    pairs: Tuple[PairwiseResult, ...]
    note: str = ""


@dataclass(frozen=True)
class ComparisonTable:
    labels: Tuple[str, ...]
    subjects: Tuple[str, ...]
    rows: Tuple[MetricRow, ...]

    def row(self, metric: str) -> MetricRow:
        for r in self.rows:
            if r.metric == metric:
                return r
        raise KeyError(metric)

    def as_text(self) -> str:
        head = f"{'metric':<12} {'chi2':>8} {'p_F':>8}  {'pair':<12} {'Z':>7} {'p':>8} {'p_holm':>8}  direction"
        lines = [f"conditions: {', '.join(self.labels)}; paired subjects: {len(self.subjects)}", head, "-" * len(head)]
        for r in self.rows:
            if r.friedman is None:
                chi, pf = "-", "-"
            else:
                chi, pf = f"{r.friedman.statistic:.2f}", f"{r.friedman.p:.4f}"
            if not r.pairs:
                lines.append(f"{r.metric:<12} {chi:>8} {pf:>8}  {'-':<12} {'-':>7} {'-':>8} {'-':>8}  {r.note}")
                continue
            for i, pr in enumerate(r.pairs):
                name = r.metric if i == 0 else ""
                c, f = (chi, pf) if i == 0 else ("", "")
                pair = f"{pr.b} vs {pr.a}"
                lines.append(
                    f"{name:<12} {c:>8} {f:>8}  {pair:<12} {pr.z:>7.3f} {pr.p:>8.4f} {pr.p_holm:>8.4f}  {pr.direction}"
                )
            if r.note:
                lines.append(f"{'':<12} note: {r.note}")
        return "\n".join(lines)


def _subject_key(key: str):
    # numeric seeds sort numerically, anything else lexically
    try:
        return (0, int(key), "")
    except ValueError:
        return (1, 0, key)


def _pair_up(groups: Mapping[str, Sequence[MetricsReport]], paired_by: str) -> Tuple[List[str], Dict[str, Dict[str, MetricsReport]]]:
    indexed: Dict[str, Dict[str, MetricsReport]] = {}
    for label, reports in groups.items():
        table: Dict[str, MetricsReport] = {}
        for rep in reports:
            if paired_by not in rep.meta:
                raise UnpairedInput(f"condition {label!r}: report lacks meta[{paired_by!r}]")
            key = str(rep.meta[paired_by])
            if key in table:
                raise UnpairedInput(f"condition {label!r}: duplicate {paired_by}={key}")
            table[key] = rep
        indexed[label] = table
    key_sets = [set(t) for t in indexed.values()]
    if not key_sets or not key_sets[0]:
        raise UnpairedInput("no reports supplied")
    if any(ks != key_sets[0] for ks in key_sets[1:]):
        raise UnpairedInput(f"conditions are not paired on {paired_by}: subject sets differ")
    return sorted(key_sets[0], key=_subject_key), indexed


def _direction(z: float, p_holm: float, alpha: float) -> str:
    if z == 0:
        return "No change"
    word = "Increase" if z > 0 else "Decrease"
    return word if p_holm < alpha else f"{word} (n.s.)"


def compare_conditions(
    groups: Mapping[str, Sequence[MetricsReport]],
    pairs: Optional[Sequence[Tuple[str, str]]] = None,
    paired_by: str = "seed",
    metrics: Sequence[str] = COMPARED_METRICS,
    alpha: float = 0.05,
) -> ComparisonTable:
    """Per-metric omnibus and paired follow-up tests across conditions.

    ``groups`` maps a condition label to its reports; reports are matched
    across conditions by ``meta[paired_by]``. Each pair ``(a, b)`` is tested
    on ``b - a`` and Holm-adjusted across the pairs of the same metric.
    """
    if len(groups) < 2:
        raise UnpairedInput("need at least two conditions")
    labels = tuple(groups)
    subjects, indexed = _pair_up(groups, paired_by)
    if pairs is None:
        pairs = list(itertools.combinations(labels, 2))
    for a, b in pairs:
        if a not in indexed or b not in indexed:
            raise UnpairedInput(f"unknown condition in pair ({a}, {b})")

    rows = []
    patterns: Dict[Tuple[str, str], Dict[Tuple[float, ...], List[str]]] = {}
    for metric in metrics:
        columns = {lab: [indexed[lab][s].value(metric) for s in subjects] for lab in labels}
        if any(not math.isfinite(v) for col in columns.values() for v in col):
            rows.append(MetricRow(metric, None, (), "not available for every run"))
            continue

        omnibus = None
        if len(labels) >= 3:
            matrix = [[columns[lab][i] for lab in labels] for i in range(len(subjects))]
            try:
                omnibus = friedman(matrix)
            except DegenerateInput:
                omnibus = None

        raw = []
        for a, b in pairs:
            paired = list(zip(columns[a], columns[b]))
            try:
                res = wilcoxon_signed_rank(paired)
            except AllZeroDifferences:
                res = TestResult(0.0, 1.0, n=0, n_zero=len(paired), exact=True)
            else:
                patterns.setdefault((a, b), {}).setdefault(signed_rank_pattern(paired), []).append(metric)
            raw.append(res)
        adjusted = holm_correct([r.p for r in raw])
        results = tuple(
            PairwiseResult(a, b, r.statistic, r.p, ph, r.n, r.exact, _direction(r.statistic, ph, alpha))
            for (a, b), r, ph in zip(pairs, raw, adjusted)
        )
        rows.append(MetricRow(metric, omnibus, results))

    # metrics sharing a within-subject rank pattern necessarily share Z and p
    shared: Dict[str, List[str]] = {}
    for pair_patterns in patterns.values():
        for names in pair_patterns.values():
            if len(names) > 1:
                for name in names:
                    others = [m for m in names if m != name]
                    shared.setdefault(name, [])
                    shared[name] += [m for m in others if m not in shared[name]]
    rows = [
        MetricRow(r.metric, r.friedman, r.pairs, f"same signed-rank pattern as {', '.join(shared[r.metric])}")
        if r.metric in shared and not r.note
        else r
        for r in rows
    ]
    return ComparisonTable(labels, tuple(subjects), tuple(rows))
