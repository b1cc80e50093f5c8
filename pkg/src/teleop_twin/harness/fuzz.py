"""Random short scenarios for stress-testing force bounds and gating."""

from __future__ import annotations

import math
import random
from typing import Dict, List

from ..haptics import PRESETS

_MATERIALS = sorted(PRESETS)


def _point(rng: random.Random, spread: float) -> List[float]:
    return [round(rng.uniform(-spread, spread), 4) for _ in range(3)]


def _primitive(rng: random.Random) -> Dict:
    kind = rng.choice(("sphere", "halfspace", "capsule", "rounded_box"))
    block: Dict = {"type": kind, "material": rng.choice(_MATERIALS)}
    if kind == "sphere":
        block.update(center=_point(rng, 10.0), radius=round(rng.uniform(2.0, 15.0), 4))
    elif kind == "halfspace":
        normal = [rng.gauss(0.0, 1.0) for _ in range(3)]
        normal[2] = abs(normal[2]) + 0.5
        length = math.sqrt(sum(c * c for c in normal))
        block.update(point=[0.0, 0.0, round(rng.uniform(-15.0, 0.0), 4)], normal=[c / length for c in normal])
    elif kind == "capsule":
        block.update(a=_point(rng, 20.0), b=_point(rng, 20.0), radius=round(rng.uniform(1.0, 6.0), 4))
    else:
        block.update(
            center=_point(rng, 10.0),
            half_extents=[round(rng.uniform(2.0, 10.0), 4) for _ in range(3)],
            radius=round(rng.uniform(0.1, 1.5), 4),
        )
    if rng.random() < 0.5:
        block["material"] = "membrane"
        block["layers"] = [[round(rng.uniform(0.2, 2.0), 4), "membrane"], [None, rng.choice(_MATERIALS)]]
    return block


def _hand(rng: random.Random, duration: float) -> Dict:
    n = rng.randint(3, 7)
    times = sorted(rng.uniform(0.0, duration) for _ in range(n - 1))
    times = [0.0] + [round(t, 4) for t in times]
    for i in range(1, len(times)):
        if times[i] <= times[i - 1]:
            times[i] = round(times[i - 1] + 0.01, 4)
    waypoints = [[t] + _point(rng, 25.0) for t in times]
    hand: Dict = {"waypoints": waypoints, "noise_mm": round(rng.uniform(0.0, 0.2), 4)}
    if rng.random() < 0.3:
        a = rng.uniform(0.0, duration)
        hand["clutch_off"] = [[round(a, 4), round(a + rng.uniform(0.05, 0.5), 4)]]
    return hand


def fuzz_scenario(seed: int, duration_s: float = 2.0) -> Dict:
    """A random but valid scenario document; same seed, same document."""
    rng = random.Random(seed)
    hands = ["R"] if rng.random() < 0.5 else ["L", "R"]
    net: Dict = {
        "loss": round(rng.choice((0.0, 0.0, rng.uniform(0.0, 0.3))), 4),
        "delay_ms": round(rng.uniform(0.5, 8.0), 4),
        "jitter_ms": round(rng.uniform(0.0, 4.0), 4),
        "reorder": rng.random() < 0.3,
        "t_wd_ms": round(rng.uniform(30.0, 150.0), 4),
        "seed": rng.randrange(2**31),
    }
    if rng.random() < 0.3:
        a = rng.uniform(0.0, duration_s)
        net["outages"] = [[round(a, 4), round(a + rng.uniform(0.02, 0.4), 4)]]
    return {
        "name": f"fuzz-{seed}",
        "seed": seed,
        "duration_s": duration_s,
        "scene": [_primitive(rng) for _ in range(rng.randint(1, 3))],
        "teleop": {
            "alpha": round(rng.uniform(0.3, 2.0), 4),
            "max_speed_mm_s": round(rng.uniform(50.0, 400.0), 4),
        },
        "net": net,
        "hands": {h: _hand(rng, duration_s) for h in hands},
    }
