import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from teleop_twin.frames import RigidTransform
from teleop_twin.teleop import (
    Box,
    Clutch,
    FollowerState,
    Gate,
    LinkStatus,
    TeleopConfig,
    apply_increment,
    clutch,
    hold,
    safety_gate,
)

small = st.floats(-0.5, 0.5, allow_nan=False)
inc = st.tuples(small, small, small)
inside = st.tuples(st.floats(-50, 50), st.floats(-50, 50), st.floats(-20, 50))
anywhere = st.tuples(st.floats(-500, 500), st.floats(-500, 500), st.floats(-500, 500))


def test_zero_increment_keeps_pose():
    s = FollowerState((1.0, 2.0, 3.0))
    assert apply_increment(s, (0.0, 0.0, 0.0), TeleopConfig()).pose == (1.0, 2.0, 3.0)


def test_identity_mapping_shift():
    s = apply_increment(FollowerState((0.0, 0.0, 0.0)), (1.0, 0.0, 0.0), TeleopConfig())
    assert s.pose == (1.0, 0.0, 0.0)
    assert s.gate is Gate.NORMAL


def test_scaled_rotated_mapping_matches_matrix_product():
    R = RigidTransform.about_z(math.pi / 2)
    cfg = TeleopConfig(alpha=0.5, hand_to_workspace=R)
    s = apply_increment(FollowerState((0.0, 0.0, 0.0)), (1.0, 0.0, 0.0), cfg)
    expected = 0.5 * np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]) @ np.array([1.0, 0.0, 0.0])
    assert s.pose == pytest.approx(tuple(expected), abs=1e-15)


def test_clutch_never_moves_pose_and_resumes_incrementally():
    cfg = TeleopConfig(alpha=2.0)
    s = FollowerState((5.0, 5.0, 5.0))
    s = clutch(s, False)
    assert s.clutch is Clutch.DISENGAGED
    for _ in range(100):  # hand travels 100 mm while declutched
        s = apply_increment(s, (1.0, 0.0, 0.0), cfg)
    assert s.pose == (5.0, 5.0, 5.0)
    s = clutch(s, True)
    assert s.pose == (5.0, 5.0, 5.0)
    s = apply_increment(s, (1.0, 0.0, 0.0), cfg)
    assert s.pose == (7.0, 5.0, 5.0)


def test_engage_when_engaged_is_noop():
    s = FollowerState((1.0, 1.0, 1.0))
    assert clutch(s, True) == s


def test_safety_gate_examples():
    cfg = TeleopConfig()
    dt = cfg.command_period_s
    assert safety_gate((1.0, 0.0, 0.0), (0.9, 0.0, 0.0), cfg, dt) == ((1.0, 0.0, 0.0), Gate.NORMAL)
    # outside the box far away but starting on the face: projected, speed-limited along the face
    cfg_fast = TeleopConfig(max_command_speed=1e9)
    p, g = safety_gate((250.0, 0.0, 0.0), (99.0, 0.0, 0.0), cfg_fast, dt)
    assert p == (100.0, 0.0, 0.0) and g is Gate.NORMAL
    p, g = safety_gate((250.0, 0.0, 0.0), (0.0, 0.0, 0.0), cfg, dt, LinkStatus.SAFE_HOLD)
    assert p == (0.0, 0.0, 0.0) and g is Gate.SAFE_HOLD


def test_speed_clamp_shortens_along_direction():
    cfg = TeleopConfig(max_command_speed=90.0)  # 1 mm per frame
    p, _ = safety_gate((3.0, 4.0, 0.0), (0.0, 0.0, 0.0), cfg, cfg.command_period_s)
    assert p == pytest.approx((0.6, 0.8, 0.0), abs=1e-12)


def test_safe_hold_link_freezes_follower():
    s = FollowerState((1.0, 2.0, 3.0))
    out = apply_increment(s, (5.0, 5.0, 5.0), TeleopConfig(), LinkStatus.SAFE_HOLD)
    assert out.pose == s.pose and out.gate is Gate.SAFE_HOLD
    assert hold(s).gate is Gate.SAFE_HOLD and hold(s).pose == s.pose


@given(inside, inc, inc)
def test_increment_additivity_without_gating(p, a, b):
    cfg = TeleopConfig(max_command_speed=1e6)
    s = FollowerState(p)
    two = apply_increment(apply_increment(s, a, cfg), b, cfg).pose
    one = apply_increment(s, tuple(x + y for x, y in zip(a, b)), cfg).pose
    assert two == pytest.approx(one, abs=1e-12)


@given(inside, inc, st.floats(0.1, 3.0))
def test_doubling_alpha_doubles_displacement(p, d, alpha):
    big = TeleopConfig(alpha=2 * alpha, max_command_speed=1e6)
    small_cfg = TeleopConfig(alpha=alpha, max_command_speed=1e6)
    d1 = np.subtract(apply_increment(FollowerState(p), d, small_cfg).pose, p)
    d2 = np.subtract(apply_increment(FollowerState(p), d, big).pose, p)
    np.testing.assert_allclose(d2, 2 * d1, atol=1e-12)


@given(anywhere, inside, st.floats(1.0, 500.0))
def test_gate_idempotent_and_safe(candidate, prev, speed):
    cfg = TeleopConfig(max_command_speed=speed)
    dt = cfg.command_period_s
    p, _ = safety_gate(candidate, prev, cfg, dt)
    assert cfg.workspace_bounds.contains(p)
    again, _ = safety_gate(p, prev, cfg, dt)
    assert again == p


@given(st.lists(st.tuples(st.floats(-80, 80), st.floats(-80, 80), st.floats(-80, 80)), max_size=40), st.booleans())
def test_reachable_states_stay_in_bounds(incs, flip):
    cfg = TeleopConfig(alpha=3.0, max_command_speed=5000.0)
    s = FollowerState((0.0, 0.0, 0.0))
    for i, d in enumerate(incs):
        if flip and i % 7 == 3:
            s = clutch(s, s.clutch is not Clutch.ENGAGED)
        s = apply_increment(s, d, cfg)
        assert cfg.workspace_bounds.contains(s.pose)


def test_config_validation():
    with pytest.raises(ValueError):
        TeleopConfig(alpha=0.0)
    with pytest.raises(ValueError):
        TeleopConfig(max_command_speed=0.0)
    with pytest.raises(ValueError):
        Box((0.0, 0.0, 0.0), (1.0, 0.0, 1.0))
