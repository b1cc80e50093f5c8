from __future__ import annotations

import bisect
from typing import Sequence, Tuple

from ..vec import Vec3


class CatmullRom:
    """Cubic Hermite spline through timed waypoints with Catmull-Rom tangents.

    Holds the first/last waypoint outside the scripted time range.
    """

    def __init__(self, waypoints: Sequence[Tuple[float, Vec3]]):
        self.times = [t for t, _ in waypoints]
        self.points = [p for _, p in waypoints]
        n = len(self.points)
        tangents = []
        for i in range(n):
            if n == 1:
                tangents.append((0.0, 0.0, 0.0))
                continue
            lo, hi = max(i - 1, 0), min(i + 1, n - 1)
            dt = self.times[hi] - self.times[lo]
            tangents.append(tuple((self.points[hi][k] - self.points[lo][k]) / dt for k in range(3)))
        # zero end tangents so the leader eases in and out of rest
        if n > 1:
            tangents[0] = tangents[-1] = (0.0, 0.0, 0.0)
        self.tangents = tangents

    def __call__(self, t: float) -> Vec3:
        times = self.times
        if t <= times[0]:
            return self.points[0]
        if t >= times[-1]:
            return self.points[-1]
        i = bisect.bisect_right(times, t) - 1
        t0, t1 = times[i], times[i + 1]
        h = t1 - t0
        s = (t - t0) / h
        s2, s3 = s * s, s * s * s
        h00 = 2 * s3 - 3 * s2 + 1
        h10 = s3 - 2 * s2 + s
        h01 = -2 * s3 + 3 * s2
        h11 = s3 - s2
        p0, p1 = self.points[i], self.points[i + 1]
        m0, m1 = self.tangents[i], self.tangents[i + 1]
        return tuple(h00 * p0[k] + h10 * h * m0[k] + h01 * p1[k] + h11 * h * m1[k] for k in range(3))
