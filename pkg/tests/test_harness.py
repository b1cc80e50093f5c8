import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from teleop_twin.harness import (
    ConfigError,
    CorruptLog,
    load_config,
    parse_config,
    parse_log,
    read_log,
    simulate,
)
from teleop_twin.harness.analysis import UnpairedInput, compare_conditions, replay_metrics
from teleop_twin.harness.fuzz import fuzz_scenario
from teleop_twin.harness.sim import frame_time_us
from teleop_twin.harness.trajectory import CatmullRom
from teleop_twin.metrics import MetricsReport

from logs import HAND_BUILT_EXPECTED, HAND_BUILT_LOG


def small_doc(**over):
    doc = {
        "name": "unit",
        "seed": 3,
        "duration_s": 1.5,
        "scene": [{"type": "halfspace", "point": [0, 0, 0], "normal": [0, 0, 1], "material": "default"}],
        "hands": {"R": {"waypoints": [[0.0, 0, 0, 5], [0.7, 10, 0, 0.5], [1.5, 20, 0, 5]], "noise_mm": 0.05}},
    }
    doc.update(over)
    return doc


# -- configuration -----------------------------------------------------------

@pytest.mark.parametrize(
    "mutate, path",
    [
        (lambda d: d.pop("duration_s"), "duration_s"),
        (lambda d: d.update(duration_s=-1), "duration_s"),
        (lambda d: d["scene"][0].update(material="unobtainium"), "scene"),
        (lambda d: d.update(scene=[]), "scene"),
        (lambda d: d["scene"][0].update(type="torus"), "scene"),
        (lambda d: d["hands"]["R"]["waypoints"].append([0.5, 0, 0, 0]), "hands.R.waypoints[3]"),
        (lambda d: d.update(net={"loss": 2.0}), "net.loss"),
        (lambda d: d.update(net={"t_wd_ms": 5.0}), "net.t_wd_ms"),
        (lambda d: d.update(kalman={"q": 0}), "kalman.q"),
        (lambda d: d.update(teleop={"alpha": "fast"}), "teleop.alpha"),
        (lambda d: d.update(hands={"X": {"waypoints": [[0, 0, 0, 0]]}}), "hands"),
        (lambda d: d["hands"]["R"].update(start_mm=[500, 0, 0]), "hands.R.start_mm"),
        (lambda d: d.update(seed=-4), "seed"),
    ],
)
def test_config_errors_carry_field_path(mutate, path):
    doc = small_doc()
    mutate(doc)
    with pytest.raises(ConfigError) as info:
        parse_config(doc)
    assert info.value.path == path


def test_materials_file_and_overrides(tmp_path):
    (tmp_path / "mats.json").write_text(json.dumps({"dura": {"k0": 0.8}}))
    doc = small_doc(materials={"file": "mats.json", "overrides": {"default": {"k0": 0.4}}})
    doc["scene"][0]["material"] = "dura"
    path = tmp_path / "s.json"
    path.write_text(json.dumps(doc))
    cfg = load_config(path)
    assert cfg.registry["dura"].k0 == 0.8 and cfg.registry["default"].k0 == 0.4


def test_config_hash_tracks_content_and_seed_override():
    a = parse_config(small_doc())
    b = parse_config(small_doc())
    c = parse_config(small_doc(), seed=4)
    assert a.config_hash() == b.config_hash() != c.config_hash()
    assert c.seed == 4


def test_builtin_scenarios_load():
    for name in ("brain_trace", "tumor_resect"):
        cfg = load_config(name)
        assert cfg.name == name
    assert set(load_config("tumor_resect").hands) == {"L", "R"}
    with pytest.raises(ConfigError):
        load_config("no_such_scenario")


def test_catmull_rom_interpolates_waypoints():
    wp = [(0.0, (0.0, 0.0, 0.0)), (1.0, (1.0, 2.0, 0.0)), (3.0, (4.0, 0.0, 1.0))]
    spline = CatmullRom(wp)
    for t, p in wp:
        assert spline(t) == pytest.approx(p)
    assert spline(-1.0) == wp[0][1] and spline(9.0) == wp[-1][1]


# -- simulation --------------------------------------------------------------

def test_determinism_byte_identical():
    cfg = parse_config(small_doc())
    assert simulate(cfg).log.to_text() == simulate(parse_config(small_doc())).log.to_text()
    other = parse_config(small_doc(), seed=99)
    assert simulate(other).log.to_text() != simulate(cfg).log.to_text()


def test_log_round_trip_is_byte_identical(tmp_path):
    log = simulate(load_config("tumor_resect")).log
    path = tmp_path / "run.csv"
    log.write(path)
    text = path.read_text()
    again = read_log(path)
    assert again.to_text() == text
    assert again.header["config_sha256"] == load_config("tumor_resect").config_hash()
    assert [s.support for s in again.samples] == [s.support for s in log.samples]


def test_nominal_run_has_no_discards_or_safe_hold():
    res = simulate(load_config("brain_trace"))
    kinds = {e.kind for e in res.log.events}
    assert "discard" not in kinds and "link" not in kinds
    assert not any(e.kind == "gate" and e.detail == "safe_hold" for e in res.log.events)
    assert res.violations == []


def test_outage_enters_safe_hold_and_freezes_follower():
    doc = small_doc(duration_s=2.0)
    doc["net"] = {"outages": [[1.0, 10.0]], "t_wd_ms": 100.0}
    doc["hands"]["R"]["waypoints"] = [[0.0, 0, 0, 5], [2.0, 30, 0, 5]]
    res = simulate(parse_config(doc))
    holds = [e for e in res.log.events if e.kind == "link" and e.detail == "safe_hold"]
    assert len(holds) == 1
    t_ms = holds[0].t_ms
    assert abs(t_ms - 1100.0) <= 1000.0 / 90
    after = [s.p for s in res.log.samples if s.t * 1000 > t_ms]
    assert after and all(p == after[0] for p in after)


def test_rate_contract():
    res = simulate(load_config("brain_trace"))
    times_us = [round(s.t * 1e6) for s in res.log.samples]
    assert times_us == [frame_time_us(i) for i in range(len(times_us))]
    gaps = {b - a for a, b in zip(times_us, times_us[1:])}
    assert gaps <= {11_111, 11_112}
    substeps = [len(range(a // 1000 + 1, b // 1000 + 1)) for a, b in zip(times_us, times_us[1:])]
    assert set(substeps) <= {11, 12}
    assert sum(substeps) / len(substeps) == pytest.approx(1000 / 90, rel=1e-3)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_safety_closure_on_fuzzed_scenarios(seed):
    cfg = parse_config(fuzz_scenario(seed, duration_s=1.0))
    res = simulate(cfg)
    box = cfg.teleop.workspace_bounds
    assert all(box.contains(s.p) for s in res.log.samples)
    assert res.violations == []


# -- replay and comparison ---------------------------------------------------

def test_replay_stationary_run_has_zero_hazards():
    doc = small_doc(duration_s=1.0)
    doc["hands"]["R"] = {"waypoints": [[0.0, 0, 0, 20]]}
    rep = replay_metrics(simulate(parse_config(doc)).log)
    assert rep.tau_coll == 0.0 and rep.n_puncture == 0 and rep.rho_sub_mm == 0.0 and rep.L == 0.0


def test_replay_is_idempotent_and_matches_hand_arithmetic():
    log = parse_log(HAND_BUILT_LOG)
    a, b = replay_metrics(log), replay_metrics(log)
    assert a == b
    assert a.L == HAND_BUILT_EXPECTED["L"] and a.tau_coll == HAND_BUILT_EXPECTED["tau_coll"]
    assert a.d_mean == HAND_BUILT_EXPECTED["d_mean"]


def test_corrupt_logs_rejected():
    with pytest.raises(CorruptLog):
        parse_log("hello\n")
    with pytest.raises(CorruptLog):
        parse_log(HAND_BUILT_LOG.replace("# seed=0\n", ""))
    with pytest.raises(CorruptLog):
        parse_log(HAND_BUILT_LOG.replace("0.000,L,0.0,0.0,13.0", "0.000,L,zero,0.0,13.0"))
    with pytest.raises(CorruptLog):
        parse_log(HAND_BUILT_LOG.replace("500.000,R,13.0,4.0,0.0,", "500.000,Q,13.0,4.0,0.0,"))


def report(seed, **values):
    base = dict(
        d_min=1.0, d_mean=2.0, L=100.0, T=10.0, v_mean=10.0, v_max=20.0, speed_sd=3.0, tau_coll=1.0,
        n_puncture=0, min_d_L=0.5, min_d_R=0.5, rho_sub_mm=0.1, fps_avg=90.0, fps_p1=89.0,
        anchor={"L": (1.0, 2.0), "R": (1.0, 2.0)},
    )
    base.update(values)
    return MetricsReport(**base, meta={"seed": str(seed)})


def test_compare_identical_sets():
    a = [report(s, T=10.0 + s) for s in range(8)]
    table = compare_conditions({"A": a, "B": list(a)})
    for row in table.rows:
        for pr in row.pairs:
            assert pr.p == 1.0 and pr.p_holm == 1.0 and pr.direction == "No change"


def test_compare_dominance_gives_exact_p():
    a = [report(s, T=20.0 + s) for s in range(8)]
    b = [report(s, T=10.0 + s * 0.5) for s in range(8)]
    row = compare_conditions({"A": a, "B": b}).row("T")
    assert row.friedman is None
    assert row.pairs[0].p == 2 / 256 and row.pairs[0].direction == "Decrease"


def test_compare_four_conditions_friedman():
    groups = {lab: [report(s, L=100.0 + 10 * j + s) for s in range(8)] for j, lab in enumerate("ABCD")}
    table = compare_conditions(groups, pairs=[("A", "B"), ("A", "D")])
    row = table.row("L")
    assert row.friedman.statistic == 24.0 and row.friedman.df == 3
    assert [(p.a, p.b) for p in row.pairs] == [("A", "B"), ("A", "D")]
    assert all(p.p_holm >= p.p for p in row.pairs)
    assert "L" in table.as_text()


def test_compare_flags_shared_rank_patterns():
    a = [report(s, v_mean=10.0 + s, speed_sd=3.0 + s) for s in range(6)]
    b = [report(s, v_mean=12.0 + 2 * s, speed_sd=3.5 + s * 1.5) for s in range(6)]
    table = compare_conditions({"A": a, "B": b})
    assert "speed_sd" in table.row("v_mean").note


def test_compare_requires_pairing():
    a = [report(s) for s in range(4)]
    with pytest.raises(UnpairedInput):
        compare_conditions({"A": a, "B": [report(s) for s in range(1, 5)]})
    with pytest.raises(UnpairedInput):
        compare_conditions({"A": a, "B": a + [report(0)]})
    with pytest.raises(UnpairedInput):
        compare_conditions({"A": a})


def test_bundled_scenarios_exercise_the_model():
    res = simulate(load_config("tumor_resect"))
    rep = replay_metrics(res.log)
    assert rep.n_puncture >= 1
    assert set(rep.anchor) == {"L", "R"}
    assert rep.tau_coll > 0 and rep.rho_sub_mm > 0
    roles = [(e.hand, e.detail) for e in res.log.events if e.kind == "role"]
    assert roles == [("L", "support"), ("R", "active"), ("L", "active"), ("R", "support")]
