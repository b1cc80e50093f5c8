"""Depth-adaptive haptic force rendering.

The rendered force on the tool is

    F = (k0 + U d) d n - b (v.n) n - (c0 + c1 d) v_t - q_t |v_t| v_t - c_g v
        + F_fric + F_punc + F_adh

evaluated per material profile, then bounded in magnitude and slew rate.
Lengths are mm, forces N, velocities mm/s.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Dict, List, Mapping, NamedTuple, Optional, Tuple

from .geometry import ContactState, Scene, contact_state
from .vec import ZERO, Vec3, add, norm, scale, sub

SERVO_PERIOD_S = 0.001
RENDER_HZ = 90


class UnknownMaterial(KeyError):
    pass


@dataclass(frozen=True)
class HapticMaterial:
    k0: float = 0.5  # N/mm
    u: float = 0.3  # N/mm^2
    b: float = 0.02  # N s/mm
    c0: float = 0.01  # N s/mm
    c1: float = 0.005  # N s/mm^2
    q_t: float = 5e-5  # N s^2/mm^2
    c_g: float = 0.001  # N s/mm
    mu_s: float = 0.4
    mu_k: float = 0.25
    v_s: float = 5.0  # Stribeck velocity, mm/s
    v_stick: float = 0.1  # mm/s
    f_thresh: float = math.inf  # N; inf disables puncture
    puncture_drop: float = 0.5
    puncture_window_ms: float = 50.0
    sigmoid_width: float = 0.1  # N
    rupture_onset_ms: float = 5.0
    recovery_ms: float = 200.0
    k_adh: float = 0.05  # N/mm
    adh_range: float = 0.5  # mm
    # stiffness gain itself ramps with depth: k(d) = k0 + u d^2
    ramp_gain: bool = False

    def __post_init__(self):
        for name in ("k0", "u", "b", "c0", "c1", "q_t", "c_g", "k_adh", "adh_range", "sigmoid_width"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be finite and >= 0, got {value!r}")
        if not (self.mu_s >= self.mu_k >= 0):
            raise ValueError("need mu_s >= mu_k >= 0")
        if not self.f_thresh > 0:
            raise ValueError("f_thresh must be > 0")
        if not 0 < self.puncture_drop <= 1:
            raise ValueError("puncture_drop must be in (0, 1]")
        for name in ("v_s", "v_stick", "rupture_onset_ms", "recovery_ms"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if not self.puncture_window_ms >= 0:
            raise ValueError("puncture_window_ms must be >= 0")

    def to_config(self) -> dict:
        out = asdict(self)
        if math.isinf(self.f_thresh):
            out["f_thresh"] = None
        return out

    @classmethod
    def from_config(cls, block: Mapping) -> "HapticMaterial":
        known = {f.name for f in fields(cls)}
        unknown = set(block) - known
        if unknown:
            raise ValueError(f"unknown material fields: {sorted(unknown)}")
        kw = dict(block)
        if "f_thresh" in kw and kw["f_thresh"] is None:
            kw["f_thresh"] = math.inf
        return cls(**kw)


# Reference coefficients: k0 = 0.5 N/mm, U = 0.3 N/mm^2, b = 0.02 N s/mm.
REFERENCE_MATERIAL = HapticMaterial()

PRESETS: Dict[str, HapticMaterial] = {
    "default": REFERENCE_MATERIAL,
    "membrane": replace(REFERENCE_MATERIAL, f_thresh=0.6, mu_s=0.4, mu_k=0.25),
    "fascia": replace(REFERENCE_MATERIAL, k0=0.7, f_thresh=1.0, k_adh=0.03),
    "parenchyma": replace(REFERENCE_MATERIAL, k0=0.3, c0=0.02, c1=0.01, mu_s=0.3, mu_k=0.2, k_adh=0.02, adh_range=0.3),
    "vessel_wall": replace(REFERENCE_MATERIAL, k0=0.9, f_thresh=1.5, mu_s=0.5, mu_k=0.3, k_adh=0.08),
}


def load_registry(path=None, overrides: Optional[Mapping] = None) -> Dict[str, HapticMaterial]:
    """Built-in presets, optionally extended from a JSON file and inline overrides."""
    registry = dict(PRESETS)
    blocks = {}
    if path is not None:
        blocks.update(json.loads(Path(path).read_text()))
    if overrides:
        blocks.update(overrides)
    for mid, block in blocks.items():
        base = registry.get(mid, REFERENCE_MATERIAL).to_config()
        base.update(block)
        registry[mid] = HapticMaterial.from_config(base)
    return registry


@dataclass(frozen=True)
class ForceLimits:
    f_max: float = 3.3  # device limit, N
    slew_max: float = 500.0  # N/s

    def __post_init__(self):
        if not (self.f_max > 0 and self.slew_max > 0):
            raise ValueError("force limits must be > 0")


class PuncturePhase(enum.Enum):
    INTACT = "intact"
    RUPTURED = "ruptured"
    RECOVERING = "recovering"


@dataclass(frozen=True)
class PunctureState:
    phase: PuncturePhase = PuncturePhase.INTACT
    elapsed_ms: float = 0.0
    modifier: float = 1.0
    # re-armed only once the load falls well below threshold (unloading branch)
    armed: bool = True
    ruptures: int = 0


INTACT = PunctureState()


@dataclass(frozen=True)
class ForceBreakdown:
    elastic: Vec3 = ZERO
    damp_n: Vec3 = ZERO
    drag_t: Vec3 = ZERO
    drag_quad: Vec3 = ZERO
    viscous_g: Vec3 = ZERO
    friction: Vec3 = ZERO
    puncture: Vec3 = ZERO
    adhesion: Vec3 = ZERO
    total: Vec3 = ZERO

    TERMS = ("elastic", "damp_n", "drag_t", "drag_quad", "viscous_g", "friction", "puncture", "adhesion")

    def terms(self) -> Tuple[Vec3, ...]:
        return tuple(getattr(self, name) for name in self.TERMS)


def _sum_terms(terms) -> Vec3:
    x = y = z = 0.0
    for t in terms:
        x += t[0]
        y += t[1]
        z += t[2]
    return (x, y, z)


def smoothstep(x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    return x * x * (3.0 - 2.0 * x)


def rupture_gate(f_n: float, mat: HapticMaterial) -> float:
    """Logistic weight sigma((F_n - F_thresh) / width)."""
    if math.isinf(mat.f_thresh):
        return 0.0
    if mat.sigmoid_width == 0.0:
        return 1.0 if f_n > mat.f_thresh else 0.0
    z = (f_n - mat.f_thresh) / mat.sigmoid_width
    if z < -700.0:
        return 0.0
    return 1.0 / (1.0 + math.exp(-z))


_REARM_GATE = 0.01


def stiffness(d: float, mat: HapticMaterial) -> float:
    return mat.k0 + mat.u * d * d if mat.ramp_gain else mat.k0 + mat.u * d


def elastic_normal(d: float, n: Vec3, mat: HapticMaterial, punct: PunctureState = INTACT) -> Vec3:
    if d <= 0.0:
        return ZERO
    return scale(n, punct.modifier * stiffness(d, mat) * d)


def drag_terms(d: float, v_t: Vec3, mat: HapticMaterial) -> Tuple[Vec3, Vec3]:
    """Linear depth-adaptive drag and the quadratic high-speed term, both opposing v_t."""
    c = mat.c0 + mat.c1 * d
    linear = (-c * v_t[0], -c * v_t[1], -c * v_t[2])
    q = mat.q_t * norm(v_t)
    quad = (-q * v_t[0], -q * v_t[1], -q * v_t[2])
    return linear, quad


def tangential_drag(d: float, v_t: Vec3, mat: HapticMaterial) -> Vec3:
    linear, quad = drag_terms(d, v_t, mat)
    return add(linear, quad)


def stribeck_coefficient(speed: float, mat: HapticMaterial) -> float:
    return mat.mu_k + (mat.mu_s - mat.mu_k) * math.exp(-((speed / mat.v_s) ** 2))


def friction_force(contact: ContactState, f_n_mag: float, mat: HapticMaterial) -> Vec3:
    """Coulomb friction with Stribeck blending and a linear stick band.

    Below ``v_stick`` the magnitude ramps linearly to its value at ``v_stick``,
    so it never exceeds ``mu_s * F_n`` and vanishes continuously at rest.
    """
    if contact.d <= 0.0 or f_n_mag <= 0.0:
        return ZERO
    v_t = contact.v_t
    s = norm(v_t)
    if s == 0.0:
        return ZERO
    if s < mat.v_stick:
        mag = stribeck_coefficient(mat.v_stick, mat) * f_n_mag * (s / mat.v_stick)
    else:
        mag = stribeck_coefficient(s, mat) * f_n_mag
    return scale(v_t, -mag / s)


def adhesion_force(phi: float, n: Vec3, mat: HapticMaterial) -> Vec3:
    if phi < 0.0 or phi >= mat.adh_range:
        return ZERO
    mag = mat.k_adh * phi * (1.0 - phi / mat.adh_range)
    return scale(n, -mag)


def _modifier(elapsed: float, mat: HapticMaterial) -> Tuple[PuncturePhase, float]:
    onset, window = mat.rupture_onset_ms, mat.puncture_window_ms
    drop = mat.puncture_drop
    if elapsed < onset:
        return PuncturePhase.RUPTURED, 1.0 - (1.0 - drop) * smoothstep(elapsed / onset)
    if elapsed <= onset + window:
        return PuncturePhase.RUPTURED, drop
    r = elapsed - onset - window
    if r >= mat.recovery_ms:
        return PuncturePhase.INTACT, 1.0
    return PuncturePhase.RECOVERING, drop + (1.0 - drop) * smoothstep(r / mat.recovery_ms)


def puncture_update(state: PunctureState, f_n_mag: float, mat: HapticMaterial, dt_ms: float) -> PunctureState:
    """Advance the rupture hysteresis by one servo period.

    Loading past ``f_thresh`` triggers a rupture: the stiffness modifier eases
    down to ``puncture_drop`` over ``rupture_onset_ms``, holds for
    ``puncture_window_ms`` and eases back to 1 over ``recovery_ms`` (smoothstep
    both ways, so C1 in time). A new rupture needs the load to fall back below
    the sigmoid's lower tail first.
    """
    if not dt_ms > 0:
        raise ValueError("dt_ms must be > 0")
    if state.phase is PuncturePhase.INTACT:
        if not state.armed:
            if rupture_gate(f_n_mag, mat) < _REARM_GATE:
                return replace(state, armed=True)
            return state
        if f_n_mag > mat.f_thresh:
            return PunctureState(PuncturePhase.RUPTURED, 0.0, 1.0, False, state.ruptures + 1)
        return state
    elapsed = state.elapsed_ms + dt_ms
    phase, m = _modifier(elapsed, mat)
    if phase is PuncturePhase.INTACT:
        return PunctureState(PuncturePhase.INTACT, 0.0, 1.0, False, state.ruptures)
    return PunctureState(phase, elapsed, m, False, state.ruptures)


def _within(v: Vec3, bound: float) -> Vec3:
    """Scale ``v`` so ``norm(v) <= bound`` holds exactly in floating point."""
    mag = norm(v)
    if mag <= bound:
        return v
    v = scale(v, bound / mag)
    while norm(v) > bound:
        v = scale(v, 1.0 - 2.0**-50)
    return v


def limit_force(F: Vec3, prev: Optional[Vec3], limits: ForceLimits, dt: float) -> Vec3:
    """Clamp magnitude to ``f_max``, then the per-tick change to ``slew_max * dt``."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    F = _within(F, limits.f_max)
    if prev is None:
        return F
    diff = sub(F, prev)
    max_step = limits.slew_max * dt
    if norm(diff) <= max_step:
        return F
    diff = _within(diff, max_step)
    F = add(prev, diff)
    # the addition can round either bound over by an ulp; pull back toward prev
    while norm(sub(F, prev)) > max_step or norm(F) > limits.f_max:
        diff = scale(diff, 1.0 - 2.0**-40)
        F = add(prev, diff)
    return F


def _raw_terms(contact: ContactState, mat: HapticMaterial, modifier: float):
    """Unlimited force terms for one material, plus the normal load magnitude."""
    d, n, v = contact.d, contact.n, contact.v
    if d > 0.0:
        k = stiffness(d, mat)
        el = k * d
        elastic = (el * n[0], el * n[1], el * n[2])
        pm = (modifier - 1.0) * el
        puncture = (pm * n[0], pm * n[1], pm * n[2])
        vn = v[0] * n[0] + v[1] * n[1] + v[2] * n[2]
        bn = -mat.b * vn
        damp_n = (bn * n[0], bn * n[1], bn * n[2])
        drag_t, drag_quad = drag_terms(d, contact.v_t, mat)
        cg = -mat.c_g
        viscous = (cg * v[0], cg * v[1], cg * v[2])
        f_n = max(0.0, modifier * el + bn)
        friction = friction_force(contact, f_n, mat)
        return (elastic, damp_n, drag_t, drag_quad, viscous, friction, puncture, ZERO), f_n
    phi = contact.phi
    if phi < mat.adh_range:
        cg = -mat.c_g
        viscous = (cg * v[0], cg * v[1], cg * v[2])
        adhesion = adhesion_force(phi, n, mat)
        return (ZERO, ZERO, ZERO, ZERO, viscous, ZERO, ZERO, adhesion), 0.0
    return (ZERO,) * 8, 0.0


def assemble_force(
    contact: ContactState,
    mat: HapticMaterial,
    punct: PunctureState,
    prev_force: Optional[Vec3],
    limits: ForceLimits,
    dt: float,
    blend: Optional[Tuple[HapticMaterial, float]] = None,
) -> Tuple[ForceBreakdown, Vec3, PunctureState]:
    terms, f_n = _raw_terms(contact, mat, punct.modifier)
    if blend is not None and blend[1] > 0.0:
        other, w = blend
        terms2, f_n2 = _raw_terms(contact, other, punct.modifier)
        a = 1.0 - w
        terms = tuple(
            (a * t[0] + w * s[0], a * t[1] + w * s[1], a * t[2] + w * s[2]) for t, s in zip(terms, terms2)
        )
        f_n = a * f_n + w * f_n2
    total = _sum_terms(terms)
    breakdown = ForceBreakdown(*terms, total=total)
    output = limit_force(total, prev_force, limits, dt)
    new_punct = puncture_update(punct, f_n, mat, dt * 1000.0)
    return breakdown, output, new_punct


def render_frame_time_us(k: int) -> int:
    return (k * 1_000_000) // RENDER_HZ


@dataclass(frozen=True)
class HapticState:
    puncture: PunctureState = INTACT
    prev_force: Vec3 = ZERO
    render_force: Vec3 = ZERO
    render_index: int = 0


class TickResult(NamedTuple):
    output: Vec3
    breakdown: ForceBreakdown
    contact: ContactState
    state: HapticState
    events: List[str]
    render: Optional[Vec3]


def haptic_tick(
    scene: Scene,
    position: Vec3,
    velocity: Vec3,
    registry: Mapping[str, HapticMaterial],
    state: HapticState,
    limits: ForceLimits = ForceLimits(),
    dt: float = SERVO_PERIOD_S,
    now_us: Optional[int] = None,
) -> TickResult:
    """One 1 kHz servo update; emits the 90 Hz render sample when one falls due."""
    contact = contact_state(scene, position, velocity)
    try:
        mat = registry[contact.material_id]
        blend = None
        if contact.blend is not None:
            blend = (registry[contact.blend[0]], contact.blend[1])
    except KeyError as exc:
        raise UnknownMaterial(str(exc)) from None
    breakdown, output, punct = assemble_force(contact, mat, state.puncture, state.prev_force, limits, dt, blend)

    events = []
    if punct.ruptures > state.puncture.ruptures:
        events.append("rupture")

    render = None
    render_force, render_index = state.render_force, state.render_index
    if now_us is not None and now_us >= render_frame_time_us(render_index):
        # latest-value decimation: no averaging, keeps onset transients
        render = render_force = output
        while render_frame_time_us(render_index) <= now_us:
            render_index += 1
    new_state = HapticState(punct, output, render_force, render_index)
    return TickResult(output, breakdown, contact, new_state, events, render)
