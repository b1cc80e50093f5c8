"""Run-log persistence: CSV with a ``#``-prefixed header block.

Layout::

    # teleop-twin run log
    # key=value            (header: config hash, seed, version, ...)
    t_ms,hand,px,py,pz,fx,fy,fz,clearance_mm,contact,punctures_cum,seq,frame_ms
    ...sample rows...
    # events
    t_ms,hand,event,detail
    ...event rows...

Floats are written with ``repr`` so write -> read -> write is byte-identical.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Tuple, Union

from ..metrics import TrajectorySample
from ..vec import Vec3

MAGIC = "# teleop-twin run log"
SAMPLE_COLUMNS = (
    "t_ms", "hand", "px", "py", "pz", "fx", "fy", "fz",
    "clearance_mm", "contact", "punctures_cum", "seq", "frame_ms",
)
EVENT_COLUMNS = ("t_ms", "hand", "event", "detail")
EVENTS_MARKER = "# events"


class CorruptLog(ValueError):
    pass


class Event(NamedTuple):
    t_ms: float
    hand: str
    kind: str
    detail: str = ""


@dataclass
class RunLog:
    header: Dict[str, str]
    samples: List[TrajectorySample] = field(default_factory=list)
    events: List[Event] = field(default_factory=list)

    def append_sample(self, s: TrajectorySample) -> None:
        self.samples.append(s)

    def append_event(self, e: Event) -> None:
        self.events.append(e)

    @property
    def apex(self) -> Optional[Vec3]:
        raw = self.header.get("apex_mm")
        if not raw:
            return None
        x, y, z = (float(c) for c in raw.split(","))
        return (x, y, z)

    def events_of(self, kind: str) -> List[Event]:
        return [e for e in self.events if e.kind == kind]

    def to_text(self) -> str:
        out = io.StringIO()
        out.write(MAGIC + "\n")
        for key, value in self.header.items():
            out.write(f"# {key}={value}\n")
        out.write(",".join(SAMPLE_COLUMNS) + "\n")
        for s in self.samples:
            out.write(
                ",".join(
                    (
                        _ms(s.t * 1000.0),
                        s.hand,
                        repr(s.p[0]), repr(s.p[1]), repr(s.p[2]),
                        repr(s.force[0]), repr(s.force[1]), repr(s.force[2]),
                        repr(s.clearance),
                        "1" if s.in_contact else "0",
                        str(s.punctures_cum),
                        str(s.seq),
                        _ms(s.frame_ms),
                    )
                )
                + "\n"
            )
        out.write(EVENTS_MARKER + "\n")
        out.write(",".join(EVENT_COLUMNS) + "\n")
        for e in self.events:
            out.write(f"{_ms(e.t_ms)},{e.hand},{e.kind},{e.detail}\n")
        return out.getvalue()

    def write(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_text())


def _ms(x: float) -> str:
    return f"{x:.3f}"


def _float(text: str, lineno: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise CorruptLog(f"line {lineno}: bad number {text!r}") from None


def _int(text: str, lineno: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise CorruptLog(f"line {lineno}: bad integer {text!r}") from None


def support_windows(events: List[Event]) -> Dict[str, List[Tuple[float, Optional[float]]]]:
    """Per-hand [start_ms, end_ms) windows during which the hand held the support role."""
    windows: Dict[str, List[Tuple[float, Optional[float]]]] = {}
    open_at: Dict[str, Optional[float]] = {}
    for e in events:
        if e.kind != "role":
            continue
        if e.detail == "support" and open_at.get(e.hand) is None:
            open_at[e.hand] = e.t_ms
        elif e.detail != "support" and open_at.get(e.hand) is not None:
            windows.setdefault(e.hand, []).append((open_at[e.hand], e.t_ms))
            open_at[e.hand] = None
    for hand, start in open_at.items():
        if start is not None:
            windows.setdefault(hand, []).append((start, None))
    return windows


def is_support(windows, hand: str, t_ms: float) -> bool:
    return any(a <= t_ms and (b is None or t_ms < b) for a, b in windows.get(hand, ()))


def parse_log(text: str) -> RunLog:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != MAGIC:
        raise CorruptLog("missing run-log header")
    header: Dict[str, str] = {}
    i = 1
    while i < len(lines) and lines[i].startswith("# ") and lines[i] != EVENTS_MARKER:
        body = lines[i][2:]
        if "=" not in body:
            raise CorruptLog(f"line {i + 1}: malformed header entry")
        key, value = body.split("=", 1)
        header[key] = value
        i += 1
    if "config_sha256" not in header or "seed" not in header:
        raise CorruptLog("header lacks config_sha256/seed")
    if i >= len(lines) or lines[i] != ",".join(SAMPLE_COLUMNS):
        raise CorruptLog("missing sample column row")
    i += 1

    raw_samples = []
    while i < len(lines) and lines[i] != EVENTS_MARKER:
        parts = lines[i].split(",")
        if len(parts) != len(SAMPLE_COLUMNS):
            raise CorruptLog(f"line {i + 1}: expected {len(SAMPLE_COLUMNS)} fields, got {len(parts)}")
        raw_samples.append((i + 1, parts))
        i += 1

    events: List[Event] = []
    if i < len(lines):
        i += 1
        if i >= len(lines) or lines[i] != ",".join(EVENT_COLUMNS):
            raise CorruptLog("missing event column row")
        i += 1
        while i < len(lines):
            parts = lines[i].split(",", 3)
            if len(parts) != 4:
                raise CorruptLog(f"line {i + 1}: malformed event row")
            events.append(Event(_float(parts[0], i + 1), parts[1], parts[2], parts[3]))
            i += 1

    windows = support_windows(events)
    samples = []
    for lineno, p in raw_samples:
        t_ms = _float(p[0], lineno)
        hand = p[1]
        if hand not in ("L", "R"):
            raise CorruptLog(f"line {lineno}: unknown hand {hand!r}")
        samples.append(
            TrajectorySample(
                t=t_ms / 1000.0,
                hand=hand,
                p=(_float(p[2], lineno), _float(p[3], lineno), _float(p[4], lineno)),
                clearance=_float(p[8], lineno),
                in_contact=p[9] == "1",
                punctures_cum=_int(p[10], lineno),
                frame_ms=_float(p[12], lineno),
                force=(_float(p[5], lineno), _float(p[6], lineno), _float(p[7], lineno)),
                seq=_int(p[11], lineno),
                support=is_support(windows, hand, t_ms),
            )
        )
    return RunLog(header, samples, events)


def read_log(path: Union[str, Path]) -> RunLog:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CorruptLog(f"cannot read {path}: {exc}") from None
    return parse_log(text)
