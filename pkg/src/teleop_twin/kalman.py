"""Per-axis constant-velocity Kalman filter for leader hand positions.

Positions are filtered; the teleop increments are differences of successive
posterior positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, List, Tuple

from .vec import Vec3, is_finite, vec3

# (p_pos_pos, p_pos_vel, p_vel_vel) for one axis
AxisCov = Tuple[float, float, float]

COMMAND_PERIOD_S = 1.0 / 90.0
_INITIAL_VEL_VAR = 1e6


class NonFiniteMeasurement(ValueError):
    pass


@dataclass(frozen=True)
class KalmanConfig:
    dt_s: float = COMMAND_PERIOD_S
    q: float = 100.0  # white acceleration variance, (mm/s^2)^2
    r: float = 0.01  # measurement variance, mm^2

    def __post_init__(self):
        if not self.dt_s > 0:
            raise ValueError("dt_s must be > 0")
        if not self.q > 0:
            raise ValueError("q must be > 0")
        if not self.r >= 0:
            raise ValueError("r must be >= 0")


@dataclass(frozen=True)
class KalmanState:
    position: Vec3
    velocity: Vec3
    cov: Tuple[AxisCov, AxisCov, AxisCov]

    @classmethod
    def initial(cls, measurement: Vec3, cfg: KalmanConfig) -> "KalmanState":
        if not is_finite(measurement):
            raise NonFiniteMeasurement(f"measurement {measurement!r} is not finite")
        c = (cfg.r, 0.0, _INITIAL_VEL_VAR)
        return cls(vec3(measurement), (0.0, 0.0, 0.0), (c, c, c))


def _axis_step(x: float, v: float, P: AxisCov, z: float, dt: float, q: float, r: float):
    p00, p01, p11 = P
    # predict; Q from piecewise-constant white acceleration
    xp = x + dt * v
    vp = v
    dt2 = dt * dt
    a00 = p00 + 2.0 * dt * p01 + dt2 * p11 + q * dt2 * dt2 / 4.0
    a01 = p01 + dt * p11 + q * dt2 * dt / 2.0
    a11 = p11 + q * dt2

    s = a00 + r
    k0 = a00 / s
    k1 = a01 / s
    innov = z - xp
    # convex form so r == 0 (k0 == 1) lands exactly on z
    xn = (1.0 - k0) * xp + k0 * z
    vn = vp + k1 * innov

    # Joseph form keeps P symmetric PSD
    g = 1.0 - k0
    n00 = g * g * a00 + k0 * k0 * r
    n01 = g * (a01 - k1 * a00) + k0 * k1 * r
    n11 = a11 - 2.0 * k1 * a01 + k1 * k1 * a00 + k1 * k1 * r
    return xn, vn, (n00, n01, n11)


def kf_step(state: KalmanState, measurement: Vec3, cfg: KalmanConfig) -> KalmanState:
    """One predict+update cycle on all three axes."""
    if not is_finite(measurement):
        raise NonFiniteMeasurement(f"measurement {measurement!r} is not finite")
    pos, vel, cov = [], [], []
    for i in range(3):
        x, v, P = _axis_step(
            state.position[i], state.velocity[i], state.cov[i], float(measurement[i]), cfg.dt_s, cfg.q, cfg.r
        )
        pos.append(x)
        vel.append(v)
        cov.append(P)
    return KalmanState(tuple(pos), tuple(vel), tuple(cov))


def filter_stream(measurements: Iterable[Vec3], cfg: KalmanConfig = KalmanConfig()) -> List[Vec3]:
    out: List[Vec3] = []
    state = None
    for m in measurements:
        state = KalmanState.initial(m, cfg) if state is None else kf_step(state, m, cfg)
        out.append(state.position)
    if state is None:
        raise ValueError("filter_stream needs at least one measurement")
    return out


def cov_eigenvalues(P: AxisCov) -> Tuple[float, float]:
    p00, p01, p11 = P
    tr = p00 + p11
    disc = math.sqrt(max(0.0, (p00 - p11) ** 2 / 4.0 + p01 * p01))
    return tr / 2.0 - disc, tr / 2.0 + disc
