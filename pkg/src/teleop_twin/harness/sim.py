"""Fixed-timestep simulation of the full teleoperation loop.

Per hand: leader waypoints are sampled at 90 Hz, Kalman-filtered and sent as
increment datagrams through a seeded channel; the receiver applies the
latest-valid packet to the clutched follower, and a 1 kHz haptic servo renders
forces against the twin scene. Simulated time is integer microseconds.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .. import __version__
from ..geometry import contact_state
from ..haptics import HapticState, haptic_tick
from ..kalman import KalmanState, kf_step
from ..metrics import TrajectorySample
from ..teleop import Clutch, FollowerState, Gate, LinkStatus, apply_increment, clutch, hold
from ..transport import (
    Channel,
    ChannelModel,
    Datagram,
    LatestValidReceiver,
    Verdict,
    WatchdogConfig,
    clock_sync_round,
)
from ..vec import ZERO, Vec3, add, norm, scale, sub
from .config import ScenarioConfig
from .runlog import Event, RunLog
from .trajectory import CatmullRom

TICK_US = 1000
FRAME_HZ = 90
EPOCH_US = 10**12  # leader clock origin, keeps u64 send stamps positive
SYNC_TURNAROUND_US = 50

# event priorities at equal timestamps
_SYNC, _SEND, _ARRIVE, _CONSUME = 0, 1, 2, 3


def frame_time_us(i: int) -> int:
    return (i * 1_000_000) // FRAME_HZ


def _child_seeds(seed: int, n: int) -> List[int]:
    return [int(c.generate_state(1)[0]) for c in np.random.SeedSequence(seed).spawn(n)]


class _Arm:
    def __init__(self, index: int, hand: str, cfg: ScenarioConfig, seeds: Tuple[int, int, int]):
        self.index = index
        self.hand = hand
        self.script = cfg.hands[hand]
        self.cfg = cfg
        self.leader = CatmullRom(self.script.waypoints)
        self.noise_rng = random.Random(seeds[0])
        self.sync_rng = random.Random(seeds[2])
        net = cfg.net
        self.model = ChannelModel(
            loss_prob=net.loss,
            delay_ms=net.delay_ms,
            jitter_ms=net.jitter_ms,
            reorder=net.reorder,
            outages=tuple((int(round(a * 1e6)), int(round(b * 1e6))) for a, b in net.outages),
        )
        self.channel = Channel(self.model, random.Random(seeds[1]))
        self.rx = LatestValidReceiver(start_us=0)
        self.wd = WatchdogConfig(t_wd_us=int(round(net.t_wd_ms * 1000)))
        self.mode = LinkStatus.LIVE

        start = self.script.start_mm
        if start is None:
            h2w = cfg.calibration.hand_to_workspace
            start = add(h2w.rotate(self.script.waypoints[0][1]), h2w.translation)
        self.follower = FollowerState(start)
        self.pos: Vec3 = start
        self.target: Vec3 = start
        self.step: Vec3 = ZERO
        self.haptic = HapticState()
        self.contact = contact_state(cfg.scene, start, ZERO)
        self.output: Vec3 = ZERO

        self.kf: Optional[KalmanState] = None
        self.filtered: Optional[Vec3] = None
        self.seq = 0
        self.offset_est = 0.0
        self.role: Optional[str] = None
        self.sample_holds = 0
        self.latency: List[Tuple[float, int]] = []
        self.ticks: List[Vec3] = []

    def leader_clock(self, t_us: int) -> int:
        net = self.cfg.net
        return EPOCH_US + t_us + net.clock_offset_us + int(round(net.drift_ppm * t_us / 1e6))

    def set_target(self, p: Vec3, period_us: float) -> None:
        self.target = p
        self.step = scale(sub(p, self.pos), TICK_US / period_us)


@dataclass
class SimulationResult:
    log: RunLog
    latency: Dict[str, List[Tuple[float, int]]]
    ticks: Dict[str, List[Vec3]] = field(default_factory=dict)
    violations: List[str] = field(default_factory=list)
    counters: Dict[str, int] = field(default_factory=dict)


class _Simulation:
    def __init__(self, cfg: ScenarioConfig, record_ticks: bool):
        self.cfg = cfg
        self.record_ticks = record_ticks
        net_seed = cfg.net.seed if cfg.net.seed is not None else cfg.seed
        hands = list(cfg.hands)
        noise = _child_seeds(cfg.seed, len(hands))
        chan = _child_seeds(net_seed, 2 * len(hands))
        self.arms = [
            _Arm(i, h, cfg, (noise[i], chan[2 * i], chan[2 * i + 1])) for i, h in enumerate(hands)
        ]
        header = {
            "format": "1",
            "scenario": cfg.name,
            "config_sha256": cfg.config_hash(),
            "seed": str(cfg.seed),
            "version": __version__,
            "duration_s": repr(cfg.duration_s),
        }
        if cfg.apex_mm is not None:
            header["apex_mm"] = ",".join(repr(c) for c in cfg.apex_mm)
        self.log = RunLog(header)
        self.period_us = 1_000_000 / FRAME_HZ
        self.duration_us = int(round(cfg.duration_s * 1e6))
        self.violations: List[str] = []
        self.frame = 0
        self.frame_sent = False
        self.prev_frame_us = -frame_time_us(1)
        self.sync_index = 0
        self.sync_period_us = int(round(cfg.net.sync_period_s * 1e6))

    def event(self, t_us: int, arm: _Arm, kind: str, detail: str = "") -> None:
        self.log.append_event(Event(t_us / 1000.0, arm.hand, kind, detail))

    # -- leader side -------------------------------------------------------

    def send(self, arm: _Arm, t_us: int) -> None:
        cfg = self.cfg
        p = arm.leader(t_us / 1e6)
        if arm.script.noise_mm > 0:
            g = arm.noise_rng.gauss
            s = arm.script.noise_mm
            p = (p[0] + g(0.0, s), p[1] + g(0.0, s), p[2] + g(0.0, s))
        if arm.kf is None:
            arm.kf = KalmanState.initial(p, cfg.kalman)
            increment = ZERO
        else:
            arm.kf = kf_step(arm.kf, p, cfg.kalman)
            increment = sub(arm.kf.position, arm.filtered)
        arm.filtered = arm.kf.position
        arm.seq += 1
        dg = Datagram(arm.seq, arm.leader_clock(t_us), increment, arm.script.clutch_engaged(t_us / 1e6))
        arm.channel.send(dg.encode(), t_us)

    def sync(self, arm: _Arm, t_us: int) -> None:
        m = arm.model

        def delay() -> int:
            return int(round((m.delay_ms + arm.sync_rng.random() * m.jitter_ms) * 1000.0))

        t1 = t_us
        out, back = delay(), delay()
        t2 = arm.leader_clock(t1 + out)
        t3 = t2 + SYNC_TURNAROUND_US
        t4 = t1 + out + SYNC_TURNAROUND_US + back
        arm.offset_est = clock_sync_round(t1, t2, t3, t4).offset_us

    # -- follower side -----------------------------------------------------

    def set_mode(self, arm: _Arm, mode: LinkStatus, t_us: int) -> None:
        if mode is not arm.mode:
            # LIVE <-> SAMPLE_HOLD flickers with jitter; only safe-hold edges are logged
            if LinkStatus.SAFE_HOLD in (mode, arm.mode):
                self.event(t_us, arm, "link", mode.value)
            elif mode is LinkStatus.SAMPLE_HOLD:
                arm.sample_holds += 1
            arm.mode = mode
        if mode is LinkStatus.SAFE_HOLD and arm.follower.gate is Gate.NORMAL:
            arm.follower = hold(arm.follower)
            arm.set_target(arm.pos, self.period_us)
            self.event(t_us, arm, "gate", Gate.SAFE_HOLD.value)

    def apply(self, arm: _Arm, dg: Datagram, t_us: int) -> None:
        if dg.clutch_engaged != (arm.follower.clutch is Clutch.ENGAGED):
            arm.follower = clutch(arm.follower, dg.clutch_engaged)
            self.event(t_us, arm, "clutch", "engaged" if dg.clutch_engaged else "disengaged")
        prev_gate = arm.follower.gate
        arm.follower = apply_increment(arm.follower, dg.increment, self.cfg.teleop, LinkStatus.LIVE)
        if arm.follower.gate is not prev_gate:
            self.event(t_us, arm, "gate", arm.follower.gate.value)
        arm.set_target(arm.follower.pose, self.period_us)

    def arrive(self, arm: _Arm, t_us: int, payload: bytes) -> None:
        verdict = arm.rx.receive(payload, t_us)
        if verdict is Verdict.DISCARD_STALE:
            self.event(t_us, arm, "discard", str(Datagram.decode(payload).seq))
            return
        self.set_mode(arm, LinkStatus.LIVE, t_us)
        dg = arm.rx.last_payload
        self.apply(arm, dg, t_us)
        arm.latency.append((dg.send_time_us - arm.offset_est, t_us))

    def consume(self, arm: _Arm, t_us: int) -> None:
        # SAMPLE_HOLD needs no action: the follower keeps its last commanded pose
        self.set_mode(arm, arm.rx.poll(t_us, arm.wd), t_us)

        role = arm.script.role_at(t_us / 1e6)
        if role != arm.role:
            arm.role = role
            self.event(t_us, arm, "role", role or "none")

        frame_ms = (t_us - self.prev_frame_us) / 1000.0
        self.log.append_sample(
            TrajectorySample(
                t=t_us / 1e6,
                hand=arm.hand,
                p=arm.pos,
                clearance=arm.contact.clearance,
                in_contact=arm.contact.d > 0.0,
                punctures_cum=arm.haptic.puncture.ruptures,
                frame_ms=frame_ms,
                force=arm.output,
                seq=arm.rx.last_seq or 0,
                support=role == "support",
            )
        )

    def tick(self, arm: _Arm, t_us: int) -> None:
        cfg = self.cfg
        self.set_mode(arm, arm.rx.poll(t_us, arm.wd), t_us)

        old = arm.pos
        rem = sub(arm.target, old)
        if norm(rem) <= norm(arm.step) * (1.0 + 1e-12):
            new = arm.target
            arm.step = ZERO
        else:
            new = add(old, arm.step)
        new = cfg.teleop.workspace_bounds.clamp(new)
        arm.pos = new
        vel = scale(sub(new, old), 1e6 / TICK_US)

        res = haptic_tick(cfg.scene, new, vel, cfg.registry, arm.haptic, cfg.limits, TICK_US / 1e6, t_us)
        prev = arm.output
        arm.haptic = res.state
        arm.contact = res.contact
        arm.output = res.output
        if res.events:
            for e in res.events:
                self.event(t_us, arm, e, str(res.state.puncture.ruptures))
        if self.record_ticks:
            arm.ticks.append(res.output)

        limits = cfg.limits
        mag = norm(res.output)
        jump = norm(sub(res.output, prev))
        if mag > limits.f_max or jump > limits.slew_max * (TICK_US / 1e6):
            msg = f"t_us={t_us} hand={arm.hand} |F|={mag!r} slew_step={jump!r}"
            self.violations.append(msg)
            self.event(t_us, arm, "violation", msg.replace(",", ";"))

    # -- main loop ---------------------------------------------------------

    def _next_event(self, t: int):
        horizon = min(t, self.duration_us)
        best = None
        ts = self.sync_index * self.sync_period_us
        if ts <= horizon:
            best = (ts, _SYNC, -1)
        tf = frame_time_us(self.frame)
        if tf <= horizon:
            cand = (tf, _CONSUME if self.frame_sent else _SEND, -1)
            if best is None or cand < best:
                best = cand
        for arm in self.arms:
            a = arm.channel.next_arrival()
            if a is not None and a <= t:
                cand = (a, _ARRIVE, arm.index)
                if best is None or cand < best:
                    best = cand
        return best

    def run(self) -> SimulationResult:
        arms = self.arms
        for k in range(self.duration_us // TICK_US + 1):
            t = k * TICK_US
            while True:
                ev = self._next_event(t)
                if ev is None:
                    break
                when, kind, idx = ev
                if kind == _SYNC:
                    for arm in arms:
                        self.sync(arm, when)
                    self.sync_index += 1
                elif kind == _SEND:
                    for arm in arms:
                        self.send(arm, when)
                    self.frame_sent = True
                elif kind == _ARRIVE:
                    arm = arms[idx]
                    for arrival, payload in arm.channel.deliver(when):
                        self.arrive(arm, arrival, payload)
                else:
                    for arm in arms:
                        self.consume(arm, when)
                    self.prev_frame_us = when
                    self.frame += 1
                    self.frame_sent = False
            for arm in arms:
                self.tick(arm, t)

        return SimulationResult(
            log=self.log,
            latency={a.hand: a.latency for a in arms},
            ticks={a.hand: a.ticks for a in arms} if self.record_ticks else {},
            violations=self.violations,
            counters={
                f"{a.hand}.{name}": value
                for a in arms
                for name, value in (
                    ("sent", a.channel.sent),
                    ("dropped", a.channel.dropped),
                    ("accepted", a.rx.accepted),
                    ("discarded", a.rx.discarded),
                    ("sample_holds", a.sample_holds),
                )
            },
        )


def simulate(cfg: ScenarioConfig, record_ticks: bool = False) -> SimulationResult:
    return _Simulation(cfg, record_ticks).run()


def run_scenario(cfg: ScenarioConfig) -> RunLog:
    return simulate(cfg).log
