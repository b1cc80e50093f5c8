"""Rigid registration between the hand, workspace and twin frames."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence, Tuple

import numpy as np

from .vec import Vec3, vec3

Matrix3 = Tuple[Vec3, Vec3, Vec3]

_IDENTITY: Matrix3 = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
_ORTHO_TOL = 1e-9


class DegenerateFiducials(ValueError):
    """Fewer than three correspondences, or all of them collinear."""


@dataclass(frozen=True)
class RigidTransform:
    rotation: Matrix3 = _IDENTITY
    translation: Vec3 = (0.0, 0.0, 0.0)

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=float)
        if rot.shape != (3, 3) or not np.all(np.isfinite(rot)):
            raise ValueError("rotation must be a finite 3x3 matrix")
        if not np.allclose(rot.T @ rot, np.eye(3), atol=_ORTHO_TOL, rtol=0.0):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation has det != +1")
        object.__setattr__(self, "rotation", tuple(vec3(r) for r in rot))
        object.__setattr__(self, "translation", vec3(self.translation))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, rotation, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(tuple(vec3(r) for r in np.asarray(rotation, dtype=float)), vec3(translation))

    @classmethod
    def about_z(cls, angle_rad: float, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        c, s = math.cos(angle_rad), math.sin(angle_rad)
        return cls(((c, -s, 0.0), (s, c, 0.0), (0.0, 0.0, 1.0)), vec3(translation))

    def matrix(self) -> np.ndarray:
        return np.array(self.rotation)

    def rotate(self, v: Vec3) -> Vec3:
        """Apply only the rotational part (for increments and directions)."""
        r0, r1, r2 = self.rotation
        x, y, z = v
        return (
            r0[0] * x + r0[1] * y + r0[2] * z,
            r1[0] * x + r1[1] * y + r1[2] * z,
            r2[0] * x + r2[1] * y + r2[2] * z,
        )

    def inverse(self) -> "RigidTransform":
        rt = self.matrix().T
        return RigidTransform.from_matrix(rt, -(rt @ np.array(self.translation)))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        r = self.matrix() @ other.matrix()
        t = self.matrix() @ np.array(other.translation) + np.array(self.translation)
        return RigidTransform.from_matrix(r, t)

    def to_config(self) -> dict:
        return {
            "rotation": [c for row in self.rotation for c in row],
            "translation": list(self.translation),
        }

    @classmethod
    def from_config(cls, block: dict) -> "RigidTransform":
        flat = list(block.get("rotation", [c for row in _IDENTITY for c in row]))
        if len(flat) != 9:
            raise ValueError("rotation needs 9 row-major entries")
        return cls.from_matrix(np.reshape(flat, (3, 3)), block.get("translation", (0.0, 0.0, 0.0)))


def transform_point(T: RigidTransform, p: Vec3) -> Vec3:
    x, y, z = T.rotate(p)
    tx, ty, tz = T.translation
    return (x + tx, y + ty, z + tz)


class RigResult(NamedTuple):
    transform: RigidTransform
    rms_mm: float


def register_rig(corresponding_points: Sequence[Tuple[Vec3, Vec3]]) -> RigResult:
    """Least-squares rigid fit mapping the first point of each pair onto the second.

    Solved in closed form by SVD of the cross-covariance (Kabsch). A reflection
    solution is folded back onto SO(3) by flipping the weakest singular axis.
    """
    if len(corresponding_points) < 3:
        raise DegenerateFiducials(f"need >= 3 correspondences, got {len(corresponding_points)}")
    src = np.array([a for a, _ in corresponding_points], dtype=float)
    dst = np.array([b for _, b in corresponding_points], dtype=float)
    if not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst))):
        raise ValueError("non-finite fiducial coordinates")

    src_c = src.mean(axis=0)
    dst_c = dst.mean(axis=0)
    a = src - src_c
    b = dst - dst_c

    spread = np.linalg.svd(a, compute_uv=False)
    if spread[0] == 0.0 or spread[1] <= 1e-9 * spread[0]:
        raise DegenerateFiducials("fiducials are collinear")

    u, _, vt = np.linalg.svd(a.T @ b)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0.0:
        d = 1.0
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    trans = dst_c - rot @ src_c

    resid = dst - (src @ rot.T + trans)
    rms = float(np.sqrt(np.mean(np.sum(resid**2, axis=1))))
    return RigResult(RigidTransform.from_matrix(rot, trans), rms)


@dataclass(frozen=True)
class WorkspaceCalibration:
    needle_length_mm: float = 35.0
    table_extent_mm: Tuple[float, float] = (600.0, 400.0)
    # 1 cm of tissue is 0.1 render units
    units_per_mm: float = 0.01
    hand_to_workspace: RigidTransform = field(default_factory=RigidTransform)

    def __post_init__(self):
        if not self.units_per_mm > 0:
            raise ValueError("units_per_mm must be > 0")
        if len(self.table_extent_mm) != 2 or min(self.table_extent_mm) <= 0:
            raise ValueError("table extents must be two positive lengths")
        if not self.needle_length_mm > 0:
            raise ValueError("needle_length_mm must be > 0")

    def mm_to_render_units(self, x_mm: float) -> float:
        return mm_to_render_units(x_mm, self.units_per_mm)

    def render_units_to_mm(self, x_units: float) -> float:
        return render_units_to_mm(x_units, self.units_per_mm)


def mm_to_render_units(x_mm: float, units_per_mm: float = 0.01) -> float:
    if not math.isfinite(x_mm):
        raise ValueError("length must be finite")
    return x_mm * units_per_mm


def render_units_to_mm(x_units: float, units_per_mm: float = 0.01) -> float:
    if not math.isfinite(x_units):
        raise ValueError("length must be finite")
    return x_units / units_per_mm
