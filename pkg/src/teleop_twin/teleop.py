"""Clutched leader-to-follower mapping with safety gating.

Each follower arm is an ideal Cartesian point in the workspace frame. A hand
increment moves it by ``alpha * R_hw @ delta``, after which the gate clamps the
result into the workspace box and to the maximum command speed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Tuple

from .frames import RigidTransform
from .kalman import COMMAND_PERIOD_S
from .vec import Vec3, add, norm, scale, sub, vec3


class Clutch(enum.Enum):
    ENGAGED = "engaged"
    DISENGAGED = "disengaged"


class Gate(enum.Enum):
    NORMAL = "normal"
    SAFE_HOLD = "safe_hold"


class LinkStatus(enum.Enum):
    LIVE = "live"
    SAMPLE_HOLD = "sample_hold"
    SAFE_HOLD = "safe_hold"


@dataclass(frozen=True)
class Box:
    lo: Vec3
    hi: Vec3

    def __post_init__(self):
        object.__setattr__(self, "lo", vec3(self.lo))
        object.__setattr__(self, "hi", vec3(self.hi))
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ValueError(f"degenerate box {self.lo} .. {self.hi}")

    def clamp(self, p: Vec3) -> Vec3:
        lo, hi = self.lo, self.hi
        return (
            min(max(p[0], lo[0]), hi[0]),
            min(max(p[1], lo[1]), hi[1]),
            min(max(p[2], lo[2]), hi[2]),
        )

    def contains(self, p: Vec3) -> bool:
        return all(l <= c <= h for l, c, h in zip(self.lo, p, self.hi))


@dataclass(frozen=True)
class TeleopConfig:
    alpha: float = 1.0
    hand_to_workspace: RigidTransform = field(default_factory=RigidTransform)
    workspace_bounds: Box = field(default_factory=lambda: Box((-100.0, -100.0, -50.0), (100.0, 100.0, 100.0)))
    max_command_speed: float = 200.0  # mm/s
    command_period_s: float = COMMAND_PERIOD_S

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if not self.max_command_speed > 0:
            raise ValueError("max_command_speed must be > 0")
        if not self.command_period_s > 0:
            raise ValueError("command_period_s must be > 0")


@dataclass(frozen=True)
class FollowerState:
    pose: Vec3
    clutch: Clutch = Clutch.ENGAGED
    gate: Gate = Gate.NORMAL


def safety_gate(
    candidate: Vec3, prev: Vec3, cfg: TeleopConfig, dt: float, link_status: LinkStatus = LinkStatus.LIVE
) -> Tuple[Vec3, Gate]:
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if link_status is LinkStatus.SAFE_HOLD:
        return prev, Gate.SAFE_HOLD
    p = cfg.workspace_bounds.clamp(candidate)
    step = sub(p, prev)
    length = norm(step)
    max_step = cfg.max_command_speed * dt
    # slack so re-gating an already shortened step is a no-op
    if length > max_step * (1.0 + 1e-12):
        p = cfg.workspace_bounds.clamp(add(prev, scale(step, max_step / length)))
    return p, Gate.NORMAL


def apply_increment(
    state: FollowerState, delta_hand: Vec3, cfg: TeleopConfig, link_status: LinkStatus = LinkStatus.LIVE
) -> FollowerState:
    """Advance the follower by one mapped hand increment (clutch-aware)."""
    if link_status is LinkStatus.SAFE_HOLD:
        return replace(state, gate=Gate.SAFE_HOLD)
    if state.clutch is Clutch.DISENGAGED:
        return replace(state, gate=Gate.NORMAL)
    mapped = scale(cfg.hand_to_workspace.rotate(delta_hand), cfg.alpha)
    candidate = add(state.pose, mapped)
    pose, gate = safety_gate(candidate, state.pose, cfg, cfg.command_period_s, link_status)
    return replace(state, pose=pose, gate=gate)


def clutch(state: FollowerState, engage: bool) -> FollowerState:
    # never touches the pose: re-engaging resumes from where the follower is
    return replace(state, clutch=Clutch.ENGAGED if engage else Clutch.DISENGAGED)


def hold(state: FollowerState) -> FollowerState:
    return replace(state, gate=Gate.SAFE_HOLD)
