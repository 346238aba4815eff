"""Fixed-size spatial linear algebra: rotations, poses, wrenches, screws.

Units are millimetres, newtons, newton-millimetres and radians everywhere
in this package.  Six-component quantities put translation first:
``[x, y, z, rx, ry, rz]`` for deflections and ``[Fx, Fy, Fz, Mx, My, Mz]``
for wrenches.  Rotation vectors follow the right-hand rule, so a small
rotation ``phi`` moves a point ``p`` by ``phi x p``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import LinearizationWarning

# Rotation magnitude (rad) beyond which small-motion quantities stop being
# trustworthy; constructors warn past this point instead of failing.
ROTATION_LINEAR_LIMIT = 0.1

# Relative singular-value cutoff shared by the pseudoinverse helpers.
SINGULAR_VALUE_TOL = 1e-10


def vec3(x, y=None, z=None) -> np.ndarray:
    """Build a float (3,) vector from three scalars or one sequence."""
    if y is None:
        a = np.asarray(x, dtype=float)
    else:
        a = np.array([x, y, z], dtype=float)
    if a.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("vector contains non-finite entries")
    return a


def skew(v) -> np.ndarray:
    """Cross-product matrix: skew(v) @ w == cross(v, w)."""
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def small_rotation(phi) -> np.ndarray:
    """Rotation matrix for the rotation vector ``phi`` (Rodrigues form).

    Exact for any magnitude; the first-order expansion is I + skew(phi).
    """
    phi = vec3(phi)
    angle = float(np.linalg.norm(phi))
    k = skew(phi)
    if angle < 1e-12:
        return np.eye(3) + k
    # 2*sin^2(a/2)/a^2 is the cancellation-free form of (1 - cos a)/a^2.
    s = np.sin(angle) / angle
    c = 2.0 * np.sin(angle / 2.0) ** 2 / angle**2
    return np.eye(3) + s * k + c * (k @ k)


def rotation_vector(rot) -> np.ndarray:
    """Inverse of :func:`small_rotation`: rotation vector of a matrix.

    Returns the minimal-angle vector (|phi| <= pi).
    """
    rot = np.asarray(rot, dtype=float)
    vee = 0.5 * np.array(
        [rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]]
    )
    cos_angle = np.clip((np.trace(rot) - 1.0) / 2.0, -1.0, 1.0)
    angle = float(np.arccos(cos_angle))
    if angle < 1e-7:
        return vee
    if angle > np.pi - 1e-6:
        # Near pi the antisymmetric part vanishes; recover the axis from
        # the symmetric part R + I = 2(cos a I + (1-cos a) aa^T)-ish.
        m = (rot + np.eye(3)) / 2.0
        axis = np.sqrt(np.clip(np.diag(m), 0.0, None))
        # Fix signs using the largest component as reference.
        i = int(np.argmax(axis))
        if axis[i] > 0.0:
            axis = m[i] / axis[i]
            axis[i] = np.sqrt(max(m[i, i], 0.0))
        n = np.linalg.norm(axis)
        if n == 0.0:
            return vee
        axis = axis / n
        if np.dot(axis, vee) < 0.0:
            axis = -axis
        return angle * axis
    return vee * (angle / np.sin(angle))


def pseudoinverse(a, tol=SINGULAR_VALUE_TOL) -> np.ndarray:
    """Moore-Penrose pseudoinverse with a relative singular-value cutoff.

    Singular values below ``tol`` times the largest one are treated as zero.
    """
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains non-finite entries")
    return np.linalg.pinv(a, rcond=tol)


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Pose:
    """Rigid placement: rotation then translation, p_world = R @ p_local + t."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        pos = _freeze(vec3(self.position))
        rot = np.asarray(self.rotation, dtype=float)
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rot.shape}")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > 1e-9:
            raise ValueError("rotation matrix is not orthonormal")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "rotation", _freeze(rot))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_translation(cls, t) -> "Pose":
        return cls(position=vec3(t))

    @classmethod
    def from_rotvec(cls, phi, position=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(position=vec3(position), rotation=small_rotation(phi))

    def compose(self, other: "Pose") -> "Pose":
        """This pose followed by ``other`` expressed in this pose's frame."""
        return Pose(
            position=self.position + self.rotation @ other.position,
            rotation=self.rotation @ other.rotation,
        )

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(position=-(rt @ self.position), rotation=rt)

    def transform_point(self, p) -> np.ndarray:
        return self.rotation @ vec3(p) + self.position


@dataclass(frozen=True)
class Wrench:
    """Force and moment about an agreed reference point, world axes."""

    force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    moment: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "force", _freeze(vec3(self.force)))
        object.__setattr__(self, "moment", _freeze(vec3(self.moment)))

    @classmethod
    def from_vector(cls, w) -> "Wrench":
        w = np.asarray(w, dtype=float)
        if w.shape != (6,):
            raise ValueError(f"expected a 6-vector, got shape {w.shape}")
        return cls(force=w[:3], moment=w[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.force, self.moment])

    @property
    def magnitude(self) -> float:
        return float(np.linalg.norm(self.force))


@dataclass(frozen=True)
class DeflectionScrew:
    """Small rigid displacement: translation (mm) and rotation vector (rad)."""

    translation: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "translation", _freeze(vec3(self.translation)))
        object.__setattr__(self, "rotation", _freeze(vec3(self.rotation)))
        angle = float(np.linalg.norm(self.rotation))
        if angle > ROTATION_LINEAR_LIMIT:
            warnings.warn(
                f"rotation magnitude {angle:.3g} rad exceeds the "
                f"{ROTATION_LINEAR_LIMIT} rad linear range",
                LinearizationWarning,
                stacklevel=2,
            )

    @classmethod
    def from_vector(cls, d) -> "DeflectionScrew":
        d = np.asarray(d, dtype=float)
        if d.shape != (6,):
            raise ValueError(f"expected a 6-vector, got shape {d.shape}")
        return cls(translation=d[:3], rotation=d[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.translation, self.rotation])
