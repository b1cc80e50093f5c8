"""Datagram synchronization layer: latest-valid delivery, watchdog, clock sync.

The default is a simulated channel driven by an integer-microsecond event
clock. ``UdpLoopbackLink`` exercises the same receiver over a real socket.
"""

from __future__ import annotations

import enum
import heapq
import math
import random
import socket
import struct
import threading
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple

from .teleop import LinkStatus
from .vec import Vec3

# seq u32 | send_time_us u64 | increment 3 x f64 | clutch u8 | reserved
WIRE = struct.Struct("<IQ3dBx")
DATAGRAM_SIZE = WIRE.size  # 38

COMMAND_PERIOD_US = 1_000_000 / 90
LATENCY_BUDGET_MS = 11.1

_SEQ_MOD = 1 << 32
_SEQ_HALF = 1 << 31


class MalformedDatagram(ValueError):
    pass


class NonCausalTimestamps(ValueError):
    pass


class EmptyTrace(ValueError):
    pass


@dataclass(frozen=True)
class Datagram:
    seq: int
    send_time_us: int
    increment: Vec3
    clutch_engaged: bool = True

    def encode(self) -> bytes:
        return WIRE.pack(
            self.seq % _SEQ_MOD, self.send_time_us, *self.increment, 1 if self.clutch_engaged else 0
        )

    @classmethod
    def decode(cls, data: bytes) -> "Datagram":
        if len(data) != DATAGRAM_SIZE:
            raise MalformedDatagram(f"expected {DATAGRAM_SIZE} bytes, got {len(data)}")
        seq, t, x, y, z, flag = WIRE.unpack(data)
        return cls(seq, t, (x, y, z), bool(flag))


def seq_newer(a: int, b: int) -> bool:
    """Serial-number ``a > b`` over the 32-bit ring (RFC 1982 style)."""
    diff = (a - b) % _SEQ_MOD
    return 0 < diff < _SEQ_HALF


class Verdict(enum.Enum):
    ACCEPT = "accept"
    DISCARD_STALE = "discard_stale"


@dataclass(frozen=True)
class WatchdogConfig:
    t_wd_us: int = 100_000
    command_period_us: float = COMMAND_PERIOD_US

    def __post_init__(self):
        if not self.t_wd_us > self.command_period_us:
            raise ValueError("watchdog timeout must exceed the command period")


class LatestValidReceiver:
    """Keeps only the newest datagram; anything not strictly newer is dropped."""

    def __init__(self, start_us: int = 0):
        self.last_seq: Optional[int] = None
        self.last_payload: Optional[Datagram] = None
        self.last_recv_time: int = start_us
        self.mode = LinkStatus.LIVE
        self.accepted = 0
        self.discarded = 0

    def receive(self, data, now_us: int) -> Verdict:
        dg = data if isinstance(data, Datagram) else Datagram.decode(data)
        if self.last_seq is not None and not seq_newer(dg.seq, self.last_seq):
            self.discarded += 1
            return Verdict.DISCARD_STALE
        self.last_seq = dg.seq
        self.last_payload = dg
        self.last_recv_time = now_us
        self.mode = LinkStatus.LIVE
        self.accepted += 1
        return Verdict.ACCEPT

    def poll(self, now_us: int, cfg: WatchdogConfig) -> LinkStatus:
        self.mode = watchdog_poll(self, now_us, cfg)
        return self.mode


def watchdog_poll(rx: LatestValidReceiver, now_us: int, cfg: WatchdogConfig) -> LinkStatus:
    silence = now_us - rx.last_recv_time
    if silence < 0:
        raise ValueError("poll time precedes last reception")
    if silence <= cfg.command_period_us:
        return LinkStatus.LIVE
    if silence <= cfg.t_wd_us:
        return LinkStatus.SAMPLE_HOLD
    return LinkStatus.SAFE_HOLD


class ClockSyncState(NamedTuple):
    offset_us: float  # remote clock minus local clock
    last_round_time: int
    rtt_us: int


def clock_sync_round(t1: int, t2: int, t3: int, t4: int) -> ClockSyncState:
    """Four-timestamp exchange: t1/t4 on the local clock, t2/t3 on the remote one."""
    if t4 < t1 or t3 < t2:
        raise NonCausalTimestamps(f"t1={t1} t2={t2} t3={t3} t4={t4}")
    rtt = (t4 - t1) - (t3 - t2)
    if rtt < 0:
        raise NonCausalTimestamps(f"negative round trip {rtt} us")
    offset = ((t2 - t1) + (t3 - t4)) / 2
    return ClockSyncState(offset, t4, rtt)


@dataclass(frozen=True)
class ChannelModel:
    loss_prob: float = 0.0
    delay_ms: float = 0.0
    jitter_ms: float = 0.0
    reorder: bool = False
    # (start_us, end_us) windows during which every send is lost
    outages: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self):
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("loss_prob must be in [0, 1]")
        if self.delay_ms < 0 or self.jitter_ms < 0:
            raise ValueError("delays must be >= 0")
        object.__setattr__(self, "outages", tuple((int(a), int(b)) for a, b in self.outages))

    def in_outage(self, t_us: int) -> bool:
        return any(a <= t_us < b for a, b in self.outages)


class Channel:
    """Seeded lossy/jittery link. Without ``reorder`` delivery stays FIFO."""

    def __init__(self, model: ChannelModel, rng: random.Random):
        self.model = model
        self.rng = rng
        self._inflight: List[Tuple[int, int, bytes]] = []
        self._counter = 0
        self._last_arrival = -1
        self.sent = 0
        self.dropped = 0

    def sample_delay_us(self) -> int:
        m = self.model
        jitter = self.rng.random() * m.jitter_ms if m.jitter_ms > 0 else 0.0
        return int(round((m.delay_ms + jitter) * 1000.0))

    def send(self, payload: bytes, now_us: int) -> Optional[int]:
        """Queue a datagram; returns its arrival time or None when dropped."""
        self.sent += 1
        m = self.model
        # always draw so the stream of random numbers does not depend on outages
        lost = self.rng.random() < m.loss_prob
        delay = self.sample_delay_us()
        if lost or m.in_outage(now_us):
            self.dropped += 1
            return None
        arrival = now_us + delay
        if not m.reorder:
            arrival = max(arrival, self._last_arrival)
        self._last_arrival = max(self._last_arrival, arrival)
        heapq.heappush(self._inflight, (arrival, self._counter, payload))
        self._counter += 1
        return arrival

    def next_arrival(self) -> Optional[int]:
        return self._inflight[0][0] if self._inflight else None

    def deliver(self, now_us: int) -> List[Tuple[int, bytes]]:
        out = []
        while self._inflight and self._inflight[0][0] <= now_us:
            arrival, _, payload = heapq.heappop(self._inflight)
            out.append((arrival, payload))
        return out

    def __len__(self):
        return len(self._inflight)


def channel_step(
    model: ChannelModel, inflight: Sequence[Tuple[int, bytes]], now_us: int, seed: int
) -> List[Tuple[int, bytes]]:
    """Push ``(send_time_us, payload)`` pairs through a fresh seeded channel.

    Returns ``(arrival_us, payload)`` for everything that has arrived by ``now_us``.
    """
    ch = Channel(model, random.Random(seed))
    for t, payload in sorted(inflight, key=lambda item: item[0]):
        ch.send(payload, t)
    return ch.deliver(now_us)


@dataclass
class LatencyReport:
    count: int
    mean_ms: float
    p95_ms: float
    max_ms: float
    budget_ms: float
    violations: List[Tuple[int, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_ms <= self.budget_ms

    def as_text(self) -> str:
        lines = [
            f"samples={self.count}",
            f"mean_ms={self.mean_ms:.4f}",
            f"p95_ms={self.p95_ms:.4f}",
            f"max_ms={self.max_ms:.4f}",
            f"budget_ms={self.budget_ms}",
            f"verdict={'pass' if self.passed else 'fail'}",
            f"violations={len(self.violations)}",
        ]
        lines += [f"violation index={i} latency_ms={lat:.4f}" for i, lat in self.violations[:20]]
        return "\n".join(lines)


def _percentile(sorted_vals: Sequence[float], q: float) -> float:
    if len(sorted_vals) == 1:
        return sorted_vals[0]
    pos = q / 100.0 * (len(sorted_vals) - 1)
    lo = math.floor(pos)
    hi = min(lo + 1, len(sorted_vals) - 1)
    frac = pos - lo
    return sorted_vals[lo] + (sorted_vals[hi] - sorted_vals[lo]) * frac


def latency_report(trace: Sequence[Tuple[float, float]], budget_ms: float = LATENCY_BUDGET_MS) -> LatencyReport:
    """One-way latency stats from ``(send_us, apply_us)`` pairs on a common clock."""
    if not trace:
        raise EmptyTrace("latency trace is empty")
    lat = [(apply - send) / 1000.0 for send, apply in trace]
    ordered = sorted(lat)
    violations = [(i, v) for i, v in enumerate(lat) if v > budget_ms]
    return LatencyReport(
        count=len(lat),
        mean_ms=sum(lat) / len(lat),
        p95_ms=_percentile(ordered, 95.0),
        max_ms=ordered[-1],
        budget_ms=budget_ms,
        violations=violations,
    )


class UdpLoopbackLink:
    """Real UDP over 127.0.0.1 for integration checks.

    A background thread drains the socket into a ``LatestValidReceiver``;
    consumers only ever read the latest snapshot and never block.
    """

    def __init__(self, clock_us, host: str = "127.0.0.1"):
        self._clock_us = clock_us
        self._lock = threading.Lock()
        self.receiver = LatestValidReceiver(start_us=clock_us())
        self._rx_sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._rx_sock.bind((host, 0))
        self._rx_sock.settimeout(0.05)
        self.address = self._rx_sock.getsockname()
        self._tx_sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._stop = threading.Event()
        self.latencies: List[Tuple[int, int]] = []
        self._thread = threading.Thread(target=self._run, daemon=True)

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self.close()

    def send(self, dg: Datagram) -> None:
        self._tx_sock.sendto(dg.encode(), self.address)

    def _run(self):
        while not self._stop.is_set():
            try:
                data, _ = self._rx_sock.recvfrom(2048)
            except socket.timeout:
                continue
            except OSError:
                break
            now = self._clock_us()
            try:
                with self._lock:
                    verdict = self.receiver.receive(data, now)
                    if verdict is Verdict.ACCEPT:
                        self.latencies.append((self.receiver.last_payload.send_time_us, now))
            except MalformedDatagram:
                continue

    def snapshot(self) -> Tuple[Optional[int], Optional[Datagram]]:
        with self._lock:
            return self.receiver.last_seq, self.receiver.last_payload

    def close(self):
        self._stop.set()
        if self._thread.is_alive():
            self._thread.join(timeout=1.0)
        self._rx_sock.close()
        self._tx_sock.close()
