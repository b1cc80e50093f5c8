"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import contextlib
import math
import random
import time
from dataclasses import replace

import numpy as np
from scipy.spatial.transform import Rotation

from teleop_twin.geometry import HalfSpace, Scene, SceneObject, contact_state
from teleop_twin.harness import load_config, parse_config, parse_log, simulate
from teleop_twin.harness.config import load_builtin_doc
from teleop_twin.harness.fuzz import fuzz_scenario
from teleop_twin.haptics import (
    INTACT,
    REFERENCE_MATERIAL,
    ForceLimits,
    HapticState,
    assemble_force,
    elastic_normal,
    haptic_tick,
)
from teleop_twin.metrics import (
    anchor_distances,
    clearance_metrics,
    collision_metrics,
    path_length,
)
from teleop_twin.stats import chi2_sf, friedman, holm_correct, wilcoxon_signed_rank
from teleop_twin.teleop import LinkStatus
from teleop_twin.transport import (
    Channel,
    ChannelModel,
    Datagram,
    LatestValidReceiver,
    Verdict,
    WatchdogConfig,
    clock_sync_round,
    latency_report,
)
from teleop_twin.vec import norm, sub

from logs import HAND_BUILT_EXPECTED, HAND_BUILT_LOG
from test_haptics import cycle_work, insertion_trace
from test_metrics import random_log

RESULTS = []
UP = (0.0, 0.0, 1.0)
LIMITS = ForceLimits()
SLEW_STEP = LIMITS.slew_max * 0.001


@contextlib.contextmanager
def criterion(number, title, budget_s):
    start = time.perf_counter()
    detail = {}
    try:
        yield detail
        elapsed = time.perf_counter() - start
        assert elapsed < budget_s, f"runtime {elapsed:.2f} s over {budget_s} s"
    except BaseException as exc:
        elapsed = time.perf_counter() - start
        line = f"criterion {number}: FAIL {title} ({elapsed:.2f} s) {exc}"
        RESULTS.append(line)
        print(line)
        raise
    extra = " ".join(f"{k}={v}" for k, v in detail.items())
    line = f"criterion {number}: PASS {title} ({elapsed:.2f} s) {extra}".rstrip()
    RESULTS.append(line)
    print(line)


def test_01_point_check():
    with criterion(1, "elastic point check", 1.0) as info:
        f = elastic_normal(1.0, UP, REFERENCE_MATERIAL)
        assert (REFERENCE_MATERIAL.k0, REFERENCE_MATERIAL.u) == (0.5, 0.3)
        c = contact_state(Scene((SceneObject(HalfSpace((0, 0, 0), UP), "default"),)), (0.0, 0.0, -1.0), (0, 0, 0))
        _, out, _ = assemble_force(c, REFERENCE_MATERIAL, INTACT, None, LIMITS, 0.001)
        assert abs(f[2] - 0.8) <= 1e-9 and abs(out[2] - 0.8) <= 1e-9
        assert abs(f[0]) + abs(f[1]) + abs(out[0]) + abs(out[1]) <= 1e-12
        info["F_n"] = f"{out[2]:.12f}"


def _check_ticks(ticks):
    worst_mag = worst_step = 0.0
    for forces in ticks.values():
        prev = (0.0, 0.0, 0.0)
        for f in forces:
            worst_mag = max(worst_mag, norm(f))
            worst_step = max(worst_step, norm(sub(f, prev)))
            prev = f
    return worst_mag, worst_step


def test_02_force_bounds():
    with criterion(2, "force bounds on bundled and fuzzed scenarios", 120.0) as info:
        configs = [load_config("brain_trace"), load_config("tumor_resect")]
        seeds = random.Random(20240).sample(range(10**6), 100)
        configs += [parse_config(fuzz_scenario(s)) for s in seeds]
        worst_mag = worst_step = 0.0
        violations = ticks = 0
        for cfg in configs:
            res = simulate(cfg, record_ticks=True)
            violations += len(res.violations)
            ticks += sum(len(v) for v in res.ticks.values())
            m, s = _check_ticks(res.ticks)
            worst_mag, worst_step = max(worst_mag, m), max(worst_step, s)
        assert violations == 0
        assert worst_mag <= LIMITS.f_max and worst_step <= SLEW_STEP
        info.update(scenarios=len(configs), ticks=ticks, max_F=f"{worst_mag:.6f}", max_step=f"{worst_step:.6f}")


def test_03_onset_continuity():
    with criterion(3, "contact onset continuity", 5.0) as info:
        floor = Scene((SceneObject(HalfSpace((0, 0, 0), UP), "default"),))
        tiny = contact_state(floor, (0.0, 0.0, -1e-6), (0.0, 0.0, 0.0))
        _, out, _ = assemble_force(tiny, REFERENCE_MATERIAL, INTACT, None, LIMITS, 0.001)
        assert norm(out) < 1e-5
        # unlimited curve so the limiter cannot hide a discontinuity
        open_limits = ForceLimits(f_max=1e9, slew_max=1e12)
        curve = []
        for i in range(5001):
            d = 5.0 * i / 5000
            c = contact_state(floor, (0.0, 0.0, -d), (0.0, 0.0, 0.0))
            bd, _, _ = assemble_force(c, REFERENCE_MATERIAL, INTACT, None, open_limits, 0.001)
            curve.append(bd.total)
        steps = [norm(sub(b, a)) for a, b in zip(curve, curve[1:])]
        assert max(steps) <= SLEW_STEP
        info.update(F_at_1e6=f"{norm(out):.3e}", max_fd_step=f"{max(steps):.3e}")


def test_04_puncture():
    with criterion(4, "puncture semantics on a ramp insertion", 5.0) as info:
        forces, raw, mods, ruptures = insertion_trace()
        assert ruptures == 1
        held = sum(1 for m in mods if m == 0.5)
        assert abs(held - 50) <= 1
        out_jump = max(norm(sub(b, a)) for a, b in zip(forces, forces[1:]))
        raw_jump = max(norm(sub(b, a)) for a, b in zip(raw, raw[1:]))
        assert out_jump <= SLEW_STEP and raw_jump <= SLEW_STEP
        info.update(ruptures=ruptures, ticks_at_half=held, max_jump=f"{max(out_jump, raw_jump):.4f}")


def test_05_passivity():
    with criterion(5, "passivity over closed cycles", 30.0) as info:
        works = []
        for seed in range(50):
            work, state = cycle_work(1000 + seed)
            assert state.puncture.ruptures == 0
            works.append(work)
        assert max(works) <= 1e-6
        info["max_work_Nmm"] = f"{max(works):.4g}"


def test_06_latest_valid():
    with criterion(6, "latest-valid policy over random traces", 30.0) as info:
        rng = random.Random(6)
        counterexamples = 0
        for _ in range(10_000):
            model = ChannelModel(
                loss_prob=rng.uniform(0.0, 0.9),
                delay_ms=rng.uniform(0.0, 5.0),
                jitter_ms=rng.uniform(0.0, 30.0),
                reorder=rng.random() < 0.7,
            )
            ch = Channel(model, random.Random(rng.getrandbits(32)))
            for i in range(rng.randint(1, 60)):
                ch.send(Datagram(i + 1, i * 11_111, (0.0, 0.0, 0.0)).encode(), i * 11_111)
            rx = LatestValidReceiver()
            applied, top = [], None
            for t, payload in ch.deliver(10**12):
                seq = Datagram.decode(payload).seq
                top = seq if top is None else max(top, seq)
                if rx.receive(payload, t) is Verdict.ACCEPT:
                    applied.append(seq)
                if rx.last_seq != top:
                    counterexamples += 1
            if any(b <= a for a, b in zip(applied, applied[1:])):
                counterexamples += 1
        assert counterexamples == 0
        info.update(traces=10_000, counterexamples=counterexamples)


def _first_safe_hold(silence_us, phase_us, cfg):
    """Stream at 90 Hz, then go silent for ``silence_us``; poll on the 1 ms servo grid."""
    rx = LatestValidReceiver()
    period = 11_111
    arrivals = [phase_us + i * period for i in range(10)]
    last = arrivals[-1]
    arrivals.append(last + silence_us)
    arrivals += [arrivals[-1] + (i + 1) * period for i in range(5)]
    events = iter(arrivals)
    nxt = next(events)
    seq = 0
    for now in range(0, arrivals[-1] + 1, 1000):
        while nxt is not None and nxt <= now:
            seq += 1
            rx.receive(Datagram(seq, nxt, (0.0, 0.0, 0.0)), nxt)
            nxt = next(events, None)
        if rx.poll(now, cfg) is LinkStatus.SAFE_HOLD:
            return now - (last + cfg.t_wd_us)
    return None


def test_07_watchdog():
    with criterion(7, "watchdog safe-hold timing", 10.0) as info:
        cfg = WatchdogConfig(t_wd_us=100_000)
        eps = 5_000
        worst = 0
        for phase in range(0, 11_111, 97):
            late = _first_safe_hold(cfg.t_wd_us + eps, phase, cfg)
            assert late is not None and 0 < late <= cfg.command_period_us
            worst = max(worst, late)
            assert _first_safe_hold(cfg.t_wd_us - eps, phase, cfg) is None
        # end to end: a send outage in the simulator freezes the follower
        doc = {
            "duration_s": 1.6,
            "scene": [{"type": "halfspace", "point": [0, 0, 0], "normal": [0, 0, 1], "material": "default"}],
            "hands": {"R": {"waypoints": [[0.0, 0, 0, 5], [1.6, 20, 0, 5]]}},
            "net": {"outages": [[1.0, 10.0]], "t_wd_ms": 100.0, "jitter_ms": 0.0},
        }
        res = simulate(parse_config(doc))
        holds = [e.t_ms for e in res.log.events if e.kind == "link" and e.detail == "safe_hold"]
        assert len(holds) == 1 and abs(holds[0] - 1100.0) <= 1000 / 90
        info.update(worst_detection_after_timeout_us=worst, sim_safe_hold_ms=holds[0])


def test_08_clock_sync():
    with criterion(8, "clock sync error bound", 5.0) as info:
        rng = random.Random(8)
        worst_ratio = 0.0
        for _ in range(1000):
            offset = rng.randint(-10**9, 10**9)
            t1 = rng.randint(0, 10**12)
            d_out, d_back, proc = rng.randint(0, 50_000), rng.randint(0, 50_000), rng.randint(0, 1000)
            t2 = t1 + d_out + offset
            t3 = t2 + proc
            t4 = t3 - offset + d_back
            est = clock_sync_round(t1, t2, t3, t4)
            err = abs(est.offset_us - offset)
            assert err <= est.rtt_us / 2
            if est.rtt_us:
                worst_ratio = max(worst_ratio, err / (est.rtt_us / 2))
            sym = clock_sync_round(t1, t1 + d_out + offset, t1 + d_out + offset + proc, t1 + 2 * d_out + proc)
            assert sym.offset_us == offset
        info.update(rounds=1000, worst_err_over_half_rtt=f"{worst_ratio:.3f}")


def test_09_latency_budget():
    with criterion(9, "latency budget", 10.0) as info:
        cfg = load_config("brain_trace")
        nominal = simulate(cfg)
        worst = 0.0
        for trace in nominal.latency.values():
            rep = latency_report(trace, 11.1)
            assert rep.passed and rep.max_ms <= 11.1
            worst = max(worst, rep.max_ms)
        slow = parse_config({**load_builtin_doc(cfg.name), "net": {"delay_ms": 15.0}})
        flagged = [latency_report(t, 11.1) for t in simulate(slow).latency.values()]
        assert flagged and all(not r.passed and r.violations for r in flagged)
        info.update(nominal_max_ms=f"{worst:.3f}", injected_max_ms=f"{max(r.max_ms for r in flagged):.3f}")


def test_10_stats_oracles():
    with criterion(10, "statistics oracles", 5.0) as info:
        fr = friedman([[1, 2, 3, 4]] * 8)
        assert fr.statistic == 24.0 and fr.df == 3
        p = chi2_sf(12.20, 3)
        assert 0.0065 <= p <= 0.0070
        wx = wilcoxon_signed_rank([(0.0, float(i + 1)) for i in range(8)])
        assert wx.exact and wx.p == 2 / 256
        assert holm_correct([0.01, 0.04]) == [0.02, 0.04]
        info.update(chi2=fr.statistic, p_12_20=f"{p:.5f}", wilcoxon_p=wx.p)


def test_11_metrics_oracles():
    with criterion(11, "metrics oracles", 5.0) as info:
        log = parse_log(HAND_BUILT_LOG)
        exp = HAND_BUILT_EXPECTED
        s = log.samples
        assert path_length(s) == exp["L"]
        tau, _ = collision_metrics(s)
        assert tau == exp["tau_coll"]
        assert clearance_metrics(s)[2] == exp["rho_sub_mm"]
        assert anchor_distances([x for x in s if x.support], log.apex) == exp["anchor_L"]
        worst = 0.0
        for seed in range(20):
            samples = random_log(seed)
            rot = Rotation.random(random_state=seed).as_matrix()
            shift = np.random.default_rng(seed).uniform(-100, 100, 3)
            moved = [replace(x, p=tuple(float(c) for c in rot @ np.array(x.p) + shift)) for x in samples]
            worst = max(worst, abs(path_length(moved) - path_length(samples)))
        assert worst <= 1e-9
        info.update(L=path_length(s), tau_coll=tau, rigid_err=f"{worst:.2e}")


def test_12_determinism_and_tick_cost():
    with criterion(12, "determinism and servo cost", 120.0) as info:
        for name in ("brain_trace", "tumor_resect"):
            a = simulate(load_config(name)).log.to_text()
            b = simulate(load_config(name)).log.to_text()
            assert a == b
        cfg = load_config("tumor_resect")
        state = HapticState()
        n = 20_000
        positions = [(5.0 * math.cos(k / 300), 5.0 * math.sin(k / 300), 13.5 - (k % 2000) / 1000) for k in range(n)]
        start = time.perf_counter()
        prev = positions[0]
        for k, p in enumerate(positions):
            vel = ((p[0] - prev[0]) * 1000, (p[1] - prev[1]) * 1000, (p[2] - prev[2]) * 1000)
            state = haptic_tick(cfg.scene, p, vel, cfg.registry, state, cfg.limits, 0.001, k * 1000).state
            prev = p
        mean_us = (time.perf_counter() - start) / n * 1e6
        assert mean_us < 100.0
        info["mean_haptic_tick_us"] = f"{mean_us:.1f}"
