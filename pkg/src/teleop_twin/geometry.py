"""Digital-twin scene built from exact signed-distance primitives.

Negative distance means inside. The scene is the min-union of its objects; on
an exact tie the lower-index object wins, so material resolution is
deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

from .vec import Vec3, dot, is_finite, norm, vec3

_EPS = 1e-12


class EmptyScene(ValueError):
    pass


def _sign(x: float) -> float:
    return math.copysign(1.0, x)


@dataclass(frozen=True)
class Sphere:
    center: Vec3
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", vec3(self.center))
        if not self.radius > 0:
            raise ValueError("sphere radius must be > 0")

    def query(self, p: Vec3) -> Tuple[float, Vec3]:
        c = self.center
        dx, dy, dz = p[0] - c[0], p[1] - c[1], p[2] - c[2]
        r = math.sqrt(dx * dx + dy * dy + dz * dz)
        if r < _EPS:
            return -self.radius, (0.0, 0.0, 1.0)
        return r - self.radius, (dx / r, dy / r, dz / r)


@dataclass(frozen=True)
class HalfSpace:
    """Solid region below the plane through ``point`` with outward ``normal``."""

    point: Vec3
    normal: Vec3

    def __post_init__(self):
        object.__setattr__(self, "point", vec3(self.point))
        n = vec3(self.normal)
        length = norm(n)
        if abs(length - 1.0) > 1e-9:
            raise ValueError("half-space normal must be unit length")
        object.__setattr__(self, "normal", n)

    def query(self, p: Vec3) -> Tuple[float, Vec3]:
        q, n = self.point, self.normal
        return (p[0] - q[0]) * n[0] + (p[1] - q[1]) * n[1] + (p[2] - q[2]) * n[2], n


@dataclass(frozen=True)
class Capsule:
    a: Vec3
    b: Vec3
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "a", vec3(self.a))
        object.__setattr__(self, "b", vec3(self.b))
        if not self.radius > 0:
            raise ValueError("capsule radius must be > 0")

    def query(self, p: Vec3) -> Tuple[float, Vec3]:
        a, b = self.a, self.b
        abx, aby, abz = b[0] - a[0], b[1] - a[1], b[2] - a[2]
        apx, apy, apz = p[0] - a[0], p[1] - a[1], p[2] - a[2]
        ab2 = abx * abx + aby * aby + abz * abz
        t = 0.0 if ab2 == 0.0 else min(1.0, max(0.0, (apx * abx + apy * aby + apz * abz) / ab2))
        dx, dy, dz = apx - t * abx, apy - t * aby, apz - t * abz
        r = math.sqrt(dx * dx + dy * dy + dz * dz)
        if r < _EPS:
            # on the axis: any direction perpendicular to the segment is a valid normal
            if abs(abz) < abs(abx) or abs(abz) < abs(aby):
                n = (-aby, abx, 0.0)
            else:
                n = (0.0, -abz, aby)
            ln = norm(n)
            n = (0.0, 0.0, 1.0) if ln == 0.0 else (n[0] / ln, n[1] / ln, n[2] / ln)
            return -self.radius, n
        return r - self.radius, (dx / r, dy / r, dz / r)


@dataclass(frozen=True)
class RoundedBox:
    center: Vec3
    half_extents: Vec3
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", vec3(self.center))
        object.__setattr__(self, "half_extents", vec3(self.half_extents))
        if not self.radius > 0:
            raise ValueError("rounded-box radius must be > 0")
        if min(self.half_extents) < 0:
            raise ValueError("half extents must be >= 0")

    def query(self, p: Vec3) -> Tuple[float, Vec3]:
        c, h = self.center, self.half_extents
        rel = (p[0] - c[0], p[1] - c[1], p[2] - c[2])
        q = (abs(rel[0]) - h[0], abs(rel[1]) - h[1], abs(rel[2]) - h[2])
        o = (max(q[0], 0.0), max(q[1], 0.0), max(q[2], 0.0))
        outside = math.sqrt(o[0] * o[0] + o[1] * o[1] + o[2] * o[2])
        if outside > 0.0:
            n = tuple(_sign(rel[i]) * o[i] / outside for i in range(3))
            return outside - self.radius, n
        axis = max(range(3), key=lambda i: q[i])
        n = [0.0, 0.0, 0.0]
        n[axis] = _sign(rel[axis])
        return q[axis] - self.radius, (n[0], n[1], n[2])


SdfPrimitive = Union[Sphere, HalfSpace, Capsule, RoundedBox]


@dataclass(frozen=True)
class SceneObject:
    primitive: SdfPrimitive
    material_id: str
    # ordered (band_end_mm, material_id); the last band may end at inf
    layers: Tuple[Tuple[float, str], ...] = ()
    blend_mm: float = 0.25

    def __post_init__(self):
        layers = tuple((float(end), str(mid)) for end, mid in self.layers)
        prev = 0.0
        for end, _ in layers:
            if not end > prev:
                raise ValueError("layer bands must be contiguous from 0 and strictly increasing")
            prev = end
        object.__setattr__(self, "layers", layers)
        if self.blend_mm < 0:
            raise ValueError("blend_mm must be >= 0")

    def material_at(self, depth: float) -> Tuple[str, Optional[Tuple[str, float]]]:
        """Band material at ``depth`` plus an optional (neighbour, weight) blend."""
        if not self.layers:
            return self.material_id, None
        layers = self.layers
        idx = len(layers) - 1
        for i, (end, _) in enumerate(layers):
            if depth < end:
                idx = i
                break
        mid = layers[idx][1]
        half = 0.5 * self.blend_mm
        if half > 0.0:
            # blend across the nearest band boundary so stiffness changes continuously
            if idx + 1 < len(layers):
                end = layers[idx][0]
                if depth > end - half:
                    return mid, (layers[idx + 1][1], (depth - (end - half)) / self.blend_mm)
            if idx > 0:
                start = layers[idx - 1][0]
                if depth < start + half:
                    return mid, (layers[idx - 1][1], ((start + half) - depth) / self.blend_mm)
        return mid, None

    def surface_material(self) -> str:
        return self.layers[0][1] if self.layers else self.material_id


@dataclass(frozen=True)
class Scene:
    objects: Tuple[SceneObject, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))

    def material_ids(self):
        ids = set()
        for obj in self.objects:
            ids.add(obj.material_id)
            ids.update(m for _, m in obj.layers)
        return ids


def nearest(scene: Scene, p: Vec3) -> Tuple[float, Vec3, int]:
    """(phi, normal, object index) of the minimizing object."""
    objs = scene.objects
    if not objs:
        raise EmptyScene("scene has no objects")
    best_phi, best_n = objs[0].primitive.query(p)
    best_i = 0
    for i in range(1, len(objs)):
        phi, n = objs[i].primitive.query(p)
        if phi < best_phi:
            best_phi, best_n, best_i = phi, n, i
    return best_phi, best_n, best_i


def signed_distance(scene: Scene, p: Vec3) -> Tuple[float, Vec3, str]:
    phi, n, i = nearest(scene, p)
    obj = scene.objects[i]
    mid = obj.surface_material() if phi >= 0 else obj.material_at(-phi)[0]
    return phi, n, mid


def clearance(scene: Scene, p: Vec3) -> float:
    return max(0.0, nearest(scene, p)[0])


@dataclass(frozen=True)
class ContactState:
    d: float
    n: Vec3
    v: Vec3
    v_n: Vec3
    v_t: Vec3
    material_id: str
    clearance: float
    phi: float
    blend: Optional[Tuple[str, float]] = None

    @property
    def in_contact(self) -> bool:
        return self.d > 0.0


def contact_state(scene: Scene, p: Vec3, v: Vec3) -> ContactState:
    if not is_finite(v):
        raise ValueError("tool velocity must be finite")
    phi, n, i = nearest(scene, p)
    obj = scene.objects[i]
    if phi < 0.0:
        d, clear = -phi, 0.0
        mid, blend = obj.material_at(d)
    else:
        d, clear = 0.0, phi
        mid, blend = obj.surface_material(), None
    vn_mag = dot(v, n)
    v_n = (vn_mag * n[0], vn_mag * n[1], vn_mag * n[2])
    v_t = (v[0] - v_n[0], v[1] - v_n[1], v[2] - v_n[2])
    return ContactState(d, n, v, v_n, v_t, mid, clear, phi, blend)


def primitive_from_config(block: dict) -> SdfPrimitive:
    kind = block.get("type")
    if kind == "sphere":
        return Sphere(block["center"], float(block["radius"]))
    if kind == "halfspace":
        return HalfSpace(block["point"], block["normal"])
    if kind == "capsule":
        return Capsule(block["a"], block["b"], float(block["radius"]))
    if kind == "rounded_box":
        return RoundedBox(block["center"], block["half_extents"], float(block["radius"]))
    raise ValueError(f"unknown primitive type {kind!r}")


def scene_from_config(blocks: Sequence[dict]) -> Scene:
    objects = []
    for block in blocks:
        layers = tuple(
            (math.inf if end is None else float(end), mid) for end, mid in block.get("layers", ())
        )
        objects.append(
            SceneObject(
                primitive_from_config(block),
                block["material"],
                layers,
                float(block.get("blend_mm", 0.25)),
            )
        )
    return Scene(tuple(objects))
