"""Trajectory outcome metrics computed from a run log.

All functions are pure batch computations over immutable sample lists. Time
deltas come from the logged timestamps, not the nominal 90 Hz rate, so
dropped frames are accounted for honestly.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .vec import Vec3, dist

HANDS = ("L", "R")
PROXIMITY_MM = 1.0


class EmptyLog(ValueError):
    pass


class MissingCondition(ValueError):
    pass


@dataclass(frozen=True)
class TrajectorySample:
    t: float  # s
    hand: str
    p: Vec3  # mm, workspace frame
    clearance: float  # mm
    in_contact: bool
    punctures_cum: int
    frame_ms: float
    force: Vec3 = (0.0, 0.0, 0.0)
    seq: int = 0
    support: bool = False


def by_hand(samples: Iterable[TrajectorySample]) -> Dict[str, List[TrajectorySample]]:
    out: Dict[str, List[TrajectorySample]] = {}
    for s in samples:
        out.setdefault(s.hand, []).append(s)
    return out


def _require(samples: Sequence[TrajectorySample]):
    if not samples:
        raise EmptyLog("no samples")


def path_length_per_hand(samples: Sequence[TrajectorySample]) -> Dict[str, float]:
    _require(samples)
    out = {}
    for hand, stream in by_hand(samples).items():
        out[hand] = sum(dist(a.p, b.p) for a, b in zip(stream, stream[1:]))
    return out


def path_length(samples: Sequence[TrajectorySample]) -> float:
    return sum(path_length_per_hand(samples).values())


def frame_speeds(samples: Sequence[TrajectorySample]) -> List[float]:
    speeds = []
    for stream in by_hand(samples).values():
        for a, b in zip(stream, stream[1:]):
            dt = b.t - a.t
            if dt > 0:
                speeds.append(dist(a.p, b.p) / dt)
    return speeds


def kinematics(samples: Sequence[TrajectorySample]) -> Tuple[float, float, float, float]:
    """(T, mean speed, peak speed, population SD of frame speeds)."""
    _require(samples)
    times = [s.t for s in samples]
    T = max(times) - min(times)
    speeds = frame_speeds(samples)
    if not speeds:
        return T, 0.0, 0.0, 0.0
    mean = sum(speeds) / len(speeds)
    var = sum((v - mean) ** 2 for v in speeds) / len(speeds)
    return T, mean, max(speeds), math.sqrt(var)


def _sample_intervals(stream: Sequence[TrajectorySample]) -> List[Tuple[float, float]]:
    """Interval each sample stands for: up to the next sample (last one reuses the previous gap)."""
    out = []
    for i, s in enumerate(stream):
        if i + 1 < len(stream):
            dt = stream[i + 1].t - s.t
        elif i > 0:
            dt = s.t - stream[i - 1].t
        else:
            dt = 0.0
        out.append((s.t, s.t + dt))
    return out


def collision_metrics(samples: Sequence[TrajectorySample]) -> Tuple[float, int]:
    """Contact time (union over hands, so it never exceeds the run) and puncture count."""
    _require(samples)
    spans = []
    punctures = 0
    for stream in by_hand(samples).values():
        for s, span in zip(stream, _sample_intervals(stream)):
            if s.in_contact:
                spans.append(span)
        punctures += stream[-1].punctures_cum
    spans.sort()
    total = 0.0
    cur_a = cur_b = None
    for a, b in spans:
        if cur_b is None or a > cur_b:
            if cur_b is not None:
                total += cur_b - cur_a
            cur_a, cur_b = a, b
        else:
            cur_b = max(cur_b, b)
    if cur_b is not None:
        total += cur_b - cur_a
    return total, punctures


def clearance_metrics(samples: Sequence[TrajectorySample]) -> Tuple[float, float, float]:
    """Per-hand minimum clearance and the strictly-outside sub-mm proximity ratio.

    Contact samples (clearance 0) are not proximity; they belong to contact time.
    """
    _require(samples)
    mins = {h: math.nan for h in HANDS}
    for hand, stream in by_hand(samples).items():
        mins[hand] = min(s.clearance for s in stream)
    near = sum(1 for s in samples if 0.0 < s.clearance < PROXIMITY_MM)
    return mins["L"], mins["R"], near / len(samples)


@dataclass(frozen=True)
class AnchorResult:
    d_min: float
    d_mean: float
    delta_d: Optional[float] = None


def anchor_distances(samples: Sequence[TrajectorySample], apex: Vec3) -> List[float]:
    return [dist(s.p, apex) for s in samples]


def anchor_accuracy(
    samples: Sequence[TrajectorySample],
    apex: Vec3,
    baseline: Optional[Sequence[TrajectorySample]] = None,
) -> AnchorResult:
    """Support-hand distance to the apex; with a baseline, the mean gain baseline - this."""
    if not samples:
        raise MissingCondition("no support-hand samples for this condition")
    d = anchor_distances(samples, apex)
    mean = sum(d) / len(d)
    delta = None
    if baseline is not None:
        if not baseline:
            raise MissingCondition("no support-hand samples for the baseline condition")
        db = anchor_distances(baseline, apex)
        delta = sum(db) / len(db) - mean
    return AnchorResult(min(d), mean, delta)


def fps_stats(frame_ms: Sequence[float]) -> Tuple[float, float]:
    """Average FPS and 1%-low FPS (mean frame time of the slowest 1% of frames)."""
    if not frame_ms:
        raise EmptyLog("no frames")
    avg = 1000.0 / (sum(frame_ms) / len(frame_ms))
    worst = sorted(frame_ms, reverse=True)[: max(1, math.ceil(len(frame_ms) / 100))]
    return avg, 1000.0 / (sum(worst) / len(worst))


@dataclass
class MetricsReport:
    d_min: float
    d_mean: float
    L: float
    T: float
    v_mean: float
    v_max: float
    speed_sd: float
    tau_coll: float
    n_puncture: int
    min_d_L: float
    min_d_R: float
    rho_sub_mm: float
    fps_avg: float
    fps_p1: float
    # per-hand support anchoring: hand -> (d_min, d_mean)
    anchor: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    delta_d: Dict[str, float] = field(default_factory=dict)
    meta: Dict[str, str] = field(default_factory=dict)

    SCALARS = (
        "d_min", "d_mean", "L", "T", "v_mean", "v_max", "speed_sd", "tau_coll",
        "n_puncture", "min_d_L", "min_d_R", "rho_sub_mm", "fps_avg", "fps_p1",
    )

    def value(self, name: str) -> float:
        """Scalar by name; ``d_min_L``/``d_mean_R`` style names read the anchor table."""
        if name in self.SCALARS:
            return float(getattr(self, name))
        prefix, _, hand = name.rpartition("_")
        if prefix in ("d_min", "d_mean") and hand in HANDS:
            pair = self.anchor.get(hand, (math.nan, math.nan))
            return pair[0] if prefix == "d_min" else pair[1]
        raise KeyError(name)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["anchor"] = {h: list(v) for h, v in self.anchor.items()}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        kw = dict(data)
        kw["anchor"] = {h: tuple(v) for h, v in kw.get("anchor", {}).items()}
        return cls(**kw)

    def as_text(self) -> str:
        lines = [f"{name}={_fmt(getattr(self, name))}" for name in self.SCALARS]
        for hand, (dmin, dmean) in sorted(self.anchor.items()):
            lines.append(f"d_min_{hand}={_fmt(dmin)}")
            lines.append(f"d_mean_{hand}={_fmt(dmean)}")
        for hand, gain in sorted(self.delta_d.items()):
            lines.append(f"delta_d_{hand}={_fmt(gain)}")
        return "\n".join(lines)


def _fmt(x) -> str:
    if isinstance(x, int):
        return str(x)
    return repr(float(x))


def compute_report(
    samples: Sequence[TrajectorySample], apex: Optional[Vec3] = None, meta: Optional[dict] = None
) -> MetricsReport:
    _require(samples)
    T, v_mean, v_max, sd = kinematics(samples)
    tau, n_punct = collision_metrics(samples)
    min_l, min_r, rho = clearance_metrics(samples)
    first_hand = samples[0].hand
    frames = [s.frame_ms for s in samples if s.hand == first_hand]
    fps_avg, fps_p1 = fps_stats(frames)

    d_min = d_mean = math.nan
    anchor = {}
    if apex is not None:
        support = [s for s in samples if s.support]
        if support:
            res = anchor_accuracy(support, apex)
            d_min, d_mean = res.d_min, res.d_mean
            for hand, stream in by_hand(support).items():
                r = anchor_accuracy(stream, apex)
                anchor[hand] = (r.d_min, r.d_mean)

    return MetricsReport(
        d_min=d_min,
        d_mean=d_mean,
        L=path_length(samples),
        T=T,
        v_mean=v_mean,
        v_max=v_max,
        speed_sd=sd,
        tau_coll=tau,
        n_puncture=n_punct,
        min_d_L=min_l,
        min_d_R=min_r,
        rho_sub_mm=rho,
        fps_avg=fps_avg,
        fps_p1=fps_p1,
        anchor=anchor,
        meta=dict(meta or {}),
    )
