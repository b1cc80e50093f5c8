"""Scenario configuration: JSON loading, validation and hashing."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple, Union

from ..frames import RigidTransform, WorkspaceCalibration
from ..geometry import Scene, scene_from_config
from ..haptics import ForceLimits, HapticMaterial, load_registry
from ..kalman import KalmanConfig
from ..teleop import Box, TeleopConfig
from ..vec import Vec3, vec3

BUILTIN_SCENARIOS = ("brain_trace", "tumor_resect")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class HandScript:
    waypoints: Tuple[Tuple[float, Vec3], ...]
    noise_mm: float = 0.0
    clutch_off: Tuple[Tuple[float, float], ...] = ()
    roles: Tuple[Tuple[float, str], ...] = ()
    start_mm: Optional[Vec3] = None

    def clutch_engaged(self, t_s: float) -> bool:
        return not any(a <= t_s < b for a, b in self.clutch_off)

    def role_at(self, t_s: float) -> Optional[str]:
        role = None
        for t0, r in self.roles:
            if t_s >= t0:
                role = r
        return role


@dataclass(frozen=True)
class NetConfig:
    loss: float = 0.0
    delay_ms: float = 2.0
    jitter_ms: float = 1.0
    reorder: bool = False
    t_wd_ms: float = 100.0
    seed: Optional[int] = None
    # (start_s, end_s) windows where every datagram is lost
    outages: Tuple[Tuple[float, float], ...] = ()
    clock_offset_us: int = 0
    drift_ppm: float = 0.0
    sync_period_s: float = 1.0


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    seed: int
    duration_s: float
    calibration: WorkspaceCalibration
    scene: Scene
    registry: Mapping[str, HapticMaterial]
    teleop: TeleopConfig
    kalman: KalmanConfig
    net: NetConfig
    limits: ForceLimits
    hands: Mapping[str, HandScript]
    apex_mm: Optional[Vec3] = None
    source: dict = field(default_factory=dict, compare=False, repr=False)

    def config_hash(self) -> str:
        return config_hash(self.source)


def config_hash(doc: Mapping) -> str:
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(canon.encode()).hexdigest()


def _get(block: Mapping, key: str, path: str, default=None, required=False):
    if key not in block:
        if required:
            raise ConfigError(f"{path}.{key}" if path else key, "missing required field")
        return default
    return block[key]


def _num(value, path: str, *, positive=False, nonneg=False) -> float:
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise ConfigError(path, f"expected a number, got {value!r}") from None
    if not math.isfinite(x):
        raise ConfigError(path, "must be finite")
    if positive and not x > 0:
        raise ConfigError(path, "must be > 0")
    if nonneg and x < 0:
        raise ConfigError(path, "must be >= 0")
    return x


def _vec(value, path: str) -> Vec3:
    try:
        v = vec3(value)
    except (TypeError, ValueError):
        raise ConfigError(path, f"expected three numbers, got {value!r}") from None
    if not all(math.isfinite(c) for c in v):
        raise ConfigError(path, "must be finite")
    return v


def _calibration(block: Mapping) -> WorkspaceCalibration:
    p = "calibration"
    try:
        h2w = RigidTransform.from_config(_get(block, "hand_to_workspace", p, {}))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{p}.hand_to_workspace", str(exc)) from None
    extent = _get(block, "table_extent_mm", p, [600.0, 400.0])
    try:
        return WorkspaceCalibration(
            needle_length_mm=_num(_get(block, "needle_length_mm", p, 35.0), f"{p}.needle_length_mm", positive=True),
            table_extent_mm=tuple(_num(e, f"{p}.table_extent_mm", positive=True) for e in extent),
            units_per_mm=_num(_get(block, "units_per_mm", p, 0.01), f"{p}.units_per_mm", positive=True),
            hand_to_workspace=h2w,
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(p, str(exc)) from None


def _hand(block: Mapping, path: str, duration: float) -> HandScript:
    raw = _get(block, "waypoints", path, required=True)
    if not raw:
        raise ConfigError(f"{path}.waypoints", "needs at least one waypoint")
    waypoints = []
    prev_t = -math.inf
    for i, wp in enumerate(raw):
        wpath = f"{path}.waypoints[{i}]"
        if len(wp) != 4:
            raise ConfigError(wpath, "expected [t_s, x, y, z]")
        t = _num(wp[0], wpath)
        if not t > prev_t:
            raise ConfigError(wpath, "waypoint times must be strictly increasing")
        prev_t = t
        waypoints.append((t, _vec(wp[1:], wpath)))
    clutch_off = tuple(
        (_num(a, f"{path}.clutch_off[{i}]"), _num(b, f"{path}.clutch_off[{i}]"))
        for i, (a, b) in enumerate(_get(block, "clutch_off", path, []))
    )
    roles = []
    for i, item in enumerate(_get(block, "roles", path, [])):
        t, role = item
        if role not in ("support", "active"):
            raise ConfigError(f"{path}.roles[{i}]", f"unknown role {role!r}")
        roles.append((_num(t, f"{path}.roles[{i}]"), role))
    start = _get(block, "start_mm", path)
    return HandScript(
        waypoints=tuple(waypoints),
        noise_mm=_num(_get(block, "noise_mm", path, 0.0), f"{path}.noise_mm", nonneg=True),
        clutch_off=clutch_off,
        roles=tuple(sorted(roles)),
        start_mm=None if start is None else _vec(start, f"{path}.start_mm"),
    )


def _registry(spec, base_dir: Optional[Path]):
    if spec is None:
        return load_registry()
    try:
        if isinstance(spec, str):
            path = Path(spec)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            return load_registry(path)
        if isinstance(spec, Mapping):
            file_ref = spec.get("file")
            overrides = spec.get("overrides")
            if file_ref is None and overrides is None:
                overrides = spec
            path = None
            if file_ref is not None:
                path = Path(file_ref)
                if base_dir is not None and not path.is_absolute():
                    path = base_dir / path
            return load_registry(path, overrides)
    except (OSError, ValueError, TypeError) as exc:
        raise ConfigError("materials", str(exc)) from None
    raise ConfigError("materials", "expected a file path or a mapping")


def parse_config(doc: Mapping, base_dir: Optional[Path] = None, seed: Optional[int] = None) -> ScenarioConfig:
    doc = copy.deepcopy(dict(doc))
    if seed is not None:
        doc["seed"] = int(seed)
    name = str(doc.get("name", "scenario"))
    seed_v = doc.get("seed", 0)
    if not isinstance(seed_v, int) or seed_v < 0:
        raise ConfigError("seed", "must be a non-negative integer")
    duration = _num(_get(doc, "duration_s", "", required=True), "duration_s", positive=True)

    calib = _calibration(doc.get("calibration", {}))

    try:
        scene = scene_from_config(_get(doc, "scene", "", required=True))
    except ConfigError:
        raise
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError("scene", f"invalid primitive: {exc}") from None
    if not scene.objects:
        raise ConfigError("scene", "scene must contain at least one primitive")

    registry = _registry(doc.get("materials"), base_dir)
    missing = sorted(scene.material_ids() - set(registry))
    if missing:
        raise ConfigError("scene", f"unknown material ids {missing}")

    tb = doc.get("teleop", {})
    bounds = _get(tb, "bounds_mm", "teleop", [[-100, -100, -50], [100, 100, 100]])
    try:
        box = Box(_vec(bounds[0], "teleop.bounds_mm[0]"), _vec(bounds[1], "teleop.bounds_mm[1]"))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("teleop.bounds_mm", str(exc)) from None
    teleop = TeleopConfig(
        alpha=_num(_get(tb, "alpha", "teleop", 1.0), "teleop.alpha", positive=True),
        hand_to_workspace=calib.hand_to_workspace,
        workspace_bounds=box,
        max_command_speed=_num(_get(tb, "max_speed_mm_s", "teleop", 200.0), "teleop.max_speed_mm_s", positive=True),
    )

    kb = doc.get("kalman", {})
    kalman = KalmanConfig(
        q=_num(_get(kb, "q", "kalman", 100.0), "kalman.q", positive=True),
        r=_num(_get(kb, "r", "kalman", 0.01), "kalman.r", nonneg=True),
    )

    nb = doc.get("net", {})
    net_seed = nb.get("seed")
    if net_seed is not None and (not isinstance(net_seed, int) or net_seed < 0):
        raise ConfigError("net.seed", "must be a non-negative integer or null")
    loss = _num(_get(nb, "loss", "net", 0.0), "net.loss")
    if not 0.0 <= loss <= 1.0:
        raise ConfigError("net.loss", "must be in [0, 1]")
    t_wd = _num(_get(nb, "t_wd_ms", "net", 100.0), "net.t_wd_ms", positive=True)
    if t_wd * 1000.0 <= 1e6 / 90:
        raise ConfigError("net.t_wd_ms", "must exceed the 90 Hz command period")
    outages = tuple(
        (_num(a, f"net.outages[{i}]", nonneg=True), _num(b, f"net.outages[{i}]", nonneg=True))
        for i, (a, b) in enumerate(nb.get("outages", []))
    )
    net = NetConfig(
        loss=loss,
        delay_ms=_num(_get(nb, "delay_ms", "net", 2.0), "net.delay_ms", nonneg=True),
        jitter_ms=_num(_get(nb, "jitter_ms", "net", 1.0), "net.jitter_ms", nonneg=True),
        reorder=bool(_get(nb, "reorder", "net", False)),
        t_wd_ms=t_wd,
        seed=net_seed,
        outages=outages,
        clock_offset_us=int(_num(_get(nb, "clock_offset_us", "net", 0), "net.clock_offset_us")),
        drift_ppm=_num(_get(nb, "drift_ppm", "net", 0.0), "net.drift_ppm"),
        sync_period_s=_num(_get(nb, "sync_period_s", "net", 1.0), "net.sync_period_s", positive=True),
    )

    hb = doc.get("haptics", {})
    limits = ForceLimits(
        f_max=_num(_get(hb, "f_max_n", "haptics", 3.3), "haptics.f_max_n", positive=True),
        slew_max=_num(_get(hb, "slew_max_n_s", "haptics", 500.0), "haptics.slew_max_n_s", positive=True),
    )

    hands_doc = _get(doc, "hands", "", required=True)
    if not hands_doc or any(h not in ("L", "R") for h in hands_doc):
        raise ConfigError("hands", "expected a mapping with keys 'L' and/or 'R'")
    hands = {h: _hand(hands_doc[h], f"hands.{h}", duration) for h in sorted(hands_doc)}
    for h, script in hands.items():
        start = script.start_mm
        if start is None:
            start = calib.hand_to_workspace.rotate(script.waypoints[0][1])
            start = tuple(a + b for a, b in zip(start, calib.hand_to_workspace.translation))
        if not box.contains(start):
            raise ConfigError(f"hands.{h}.start_mm", f"follower start {start} lies outside teleop.bounds_mm")

    apex = doc.get("apex_mm")
    source = dict(doc)
    source["materials"] = {mid: m.to_config() for mid, m in sorted(registry.items())}
    return ScenarioConfig(
        name=name,
        seed=seed_v,
        duration_s=duration,
        calibration=calib,
        scene=scene,
        registry=registry,
        teleop=teleop,
        kalman=kalman,
        net=net,
        limits=limits,
        hands=hands,
        apex_mm=None if apex is None else _vec(apex, "apex_mm"),
        source=source,
    )


def builtin_path(name: str):
    return resources.files("teleop_twin.harness").joinpath("scenarios", f"{name}.json")


def load_config(ref: Union[str, Path, Mapping], seed: Optional[int] = None) -> ScenarioConfig:
    """Load a scenario from a dict, a JSON file, or a bundled scenario name."""
    if isinstance(ref, Mapping):
        return parse_config(ref, None, seed)
    path = Path(ref)
    if not path.exists() and str(ref) in BUILTIN_SCENARIOS:
        text = builtin_path(str(ref)).read_text()
        base = None
    else:
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(str(ref), f"cannot read config: {exc}") from None
        base = path.parent
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(str(ref), f"invalid JSON: {exc}") from None
    return parse_config(doc, base, seed)


def load_builtin_doc(name: str) -> Dict:
    return json.loads(builtin_path(name).read_text())
