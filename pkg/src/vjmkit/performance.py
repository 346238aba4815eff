"""Machining-oriented performance measures.

Transmission factors describe how actuator-space boxes (velocity, effort,
or joint-error limits) map to tool-space capability: either through
singular values (sphere image) or through the exact polytope image of the
limit box.  Workspace inscription finds the largest scaled copy of a
reference box that fits inside a workspace predicate.  Input efforts
evaluate the rigid-body actuation demand along a sampled trajectory.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import (
    DimensionMismatch,
    InvalidParams,
    NoFeasibleBox,
    SingularJacobian,
)
from .spatial import SINGULAR_VALUE_TOL, Pose, Wrench, _freeze

FACTOR_KINDS = ("velocity", "force", "accuracy")
FACTOR_METHODS = ("singular_value", "box_all_directions", "box_directional")

# relative singular-value cutoff below which a square map is treated as
# singular for polytope purposes
_SINGULAR_REL_TOL = 1e-12


@dataclass(frozen=True)
class ActuatorLimits:
    """Symmetric per-actuator bounds: speed, effort, and joint error."""

    max_velocity: np.ndarray
    max_effort: np.ndarray
    max_joint_error: np.ndarray

    def __post_init__(self):
        for name in ("max_velocity", "max_effort", "max_joint_error"):
            value = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if value.ndim != 1 or not np.all(value > 0):
                raise InvalidParams(f"{name} must be strictly positive per actuator")
            object.__setattr__(self, name, _freeze(value))
        if not (
            self.max_velocity.shape
            == self.max_effort.shape
            == self.max_joint_error.shape
        ):
            raise DimensionMismatch("actuator limit vectors differ in length")


@dataclass(frozen=True)
class TransmissionFactors:
    k_min: float
    k_max: float
    kind: str
    method: str

    def __post_init__(self):
        if self.kind not in FACTOR_KINDS:
            raise InvalidParams(f"kind must be one of {FACTOR_KINDS}")
        if self.method not in FACTOR_METHODS:
            raise InvalidParams(f"method must be one of {FACTOR_METHODS}")
        if not (0.0 <= self.k_min <= self.k_max):
            raise InvalidParams("factors must satisfy 0 <= k_min <= k_max")

    @property
    def condition(self) -> float:
        return self.k_max / self.k_min if self.k_min > 0 else np.inf


def singular_value_factors(matrix, kind: str = "velocity") -> TransmissionFactors:
    """Extreme amplification of unit-sphere inputs: the singular values."""
    matrix = np.asarray(matrix, dtype=float)
    if not np.all(np.isfinite(matrix)):
        raise InvalidParams("matrix entries must be finite")
    sigma = np.linalg.svd(matrix, compute_uv=False)
    sigma[sigma <= SINGULAR_VALUE_TOL * sigma[0]] = 0.0
    return TransmissionFactors(
        k_min=float(sigma[-1]),
        k_max=float(sigma[0]),
        kind=kind,
        method="singular_value",
    )


def _limit_vector(limits, attr, size):
    if isinstance(limits, ActuatorLimits):
        bounds = getattr(limits, attr)
    else:
        bounds = np.atleast_1d(np.asarray(limits, dtype=float))
    if bounds.shape != (size,):
        raise DimensionMismatch(
            f"expected {size} per-actuator bounds, got shape {bounds.shape}"
        )
    if np.any(bounds < 0):
        raise InvalidParams("bounds must be non-negative")
    return bounds


def _square_inverse(matrix):
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DimensionMismatch("polytope factors need a square map")
    sigma = np.linalg.svd(matrix, compute_uv=False)
    if sigma[-1] <= _SINGULAR_REL_TOL * sigma[0]:
        raise SingularJacobian(
            "transmission map is singular; polytope factors are undefined"
        )
    return matrix, np.linalg.inv(matrix)


def directional_factor(matrix, bounds, direction) -> float:
    """Largest s with matrix @ x = s*direction and |x_i| <= bounds_i.

    Solved as a linear program over the limit box; for a non-singular
    square map this equals min_i bounds_i / |(matrix^-1 d)_i|.
    """
    matrix, _ = _square_inverse(matrix)
    n = matrix.shape[0]
    bounds = _limit_vector(bounds, "max_velocity", n)
    direction = np.asarray(direction, dtype=float)
    if direction.shape != (n,):
        raise DimensionMismatch("direction length must match the map")
    norm = np.linalg.norm(direction)
    if norm == 0:
        raise InvalidParams("direction must be nonzero")
    direction = direction / norm
    cost = np.zeros(n + 1)
    cost[-1] = -1.0
    a_eq = np.hstack([matrix, -direction[:, None]])
    result = linprog(
        cost,
        A_eq=a_eq,
        b_eq=np.zeros(n),
        bounds=[(-b, b) for b in bounds] + [(0.0, None)],
        method="highs",
    )
    if not result.success:
        raise SingularJacobian(f"directional factor LP failed: {result.message}")
    return float(result.x[-1])


def box_velocity_factors(
    matrix, limits, directions=None, kind: str = "velocity"
) -> TransmissionFactors:
    """Extreme amplification over the actuator limit box.

    All-directions mode: the image of the box under the map is a
    parallelepiped; k_max is its farthest vertex, k_min the radius of the
    largest ball inscribed in it (minimum facet distance).  Directional
    mode reports the extreme achievable magnitudes along the requested
    directions instead.
    """
    matrix, inverse = _square_inverse(matrix)
    n = matrix.shape[0]
    bounds = _limit_vector(limits, "max_velocity", n)
    if directions is not None:
        factors = [directional_factor(matrix, bounds, d) for d in directions]
        if not factors:
            raise InvalidParams("directional mode needs at least one direction")
        return TransmissionFactors(
            k_min=float(min(factors)),
            k_max=float(max(factors)),
            kind=kind,
            method="box_directional",
        )
    signs = np.array(list(itertools.product((-1.0, 1.0), repeat=n)))
    vertices = (signs * bounds) @ matrix.T
    k_max = float(np.max(np.linalg.norm(vertices, axis=1)))
    # facet i of the image lies in the plane (row_i of inverse) . y = b_i
    row_norms = np.linalg.norm(inverse, axis=1)
    k_min = float(np.min(bounds / row_norms))
    return TransmissionFactors(
        k_min=k_min, k_max=k_max, kind=kind, method="box_all_directions"
    )


def accuracy_bounds(matrix, joint_errors, directions=None) -> TransmissionFactors:
    """Output-error extremes for per-joint error bounds (same polytope)."""
    return box_velocity_factors(matrix, joint_errors, directions, kind="accuracy")


def force_bounds(matrix, efforts, directions=None) -> TransmissionFactors:
    """Force capability from effort bounds: the polytope of inv(J)^T tau."""
    matrix, inverse = _square_inverse(matrix)
    return box_velocity_factors(inverse.T, efforts, directions, kind="force")


# ----- workspace inscription -----


@dataclass(frozen=True)
class WorkspaceBox:
    """A scaled, translated copy of the reference box W = T(mu * W0)."""

    scale: float
    transform: Pose
    base_size: np.ndarray

    def __post_init__(self):
        size = np.asarray(self.base_size, dtype=float)
        if size.shape != (3,) or not np.all(size > 0):
            raise InvalidParams("base_size must be three positive extents")
        object.__setattr__(self, "base_size", _freeze(size))

    @property
    def size(self) -> np.ndarray:
        return self.scale * self.base_size


@dataclass(frozen=True)
class VoxelMask:
    """Boolean occupancy grid usable as a workspace predicate.

    A point belongs to the workspace when it falls inside a True voxel:
    origin + i*spacing <= p < origin + (i+1)*spacing.
    """

    mask: np.ndarray
    origin: np.ndarray
    spacing: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.ndim != 3:
            raise InvalidParams("mask must be a 3-d boolean grid")
        origin = np.asarray(self.origin, dtype=float).reshape(3)
        spacing = np.atleast_1d(np.asarray(self.spacing, dtype=float))
        if spacing.size == 1:
            spacing = np.full(3, spacing[0])
        if spacing.shape != (3,) or not np.all(spacing > 0):
            raise InvalidParams("spacing must be positive")
        object.__setattr__(self, "mask", _freeze(mask))
        object.__setattr__(self, "origin", _freeze(origin))
        object.__setattr__(self, "spacing", _freeze(spacing))

    def __call__(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        idx = np.floor((points - self.origin) / self.spacing).astype(int)
        inside = np.all((idx >= 0) & (idx < self.mask.shape), axis=1)
        result = np.zeros(len(points), dtype=bool)
        if inside.any():
            sub = idx[inside]
            result[inside] = self.mask[sub[:, 0], sub[:, 1], sub[:, 2]]
        return result

    def save(self, path):
        np.savez(
            path, mask=self.mask, origin=self.origin, spacing=self.spacing
        )

    @classmethod
    def load(cls, path) -> "VoxelMask":
        with np.load(path) as data:
            return cls(
                mask=data["mask"], origin=data["origin"], spacing=data["spacing"]
            )


def _box_lattice(center, size, spacing, max_per_axis=None):
    """Grid covering the box, spacing at most the given value, corners kept."""
    axes = []
    for c, s in zip(center, size):
        count = max(2, int(np.ceil(s / spacing)) + 1)
        if max_per_axis is not None:
            count = min(count, max_per_axis)
        axes.append(np.linspace(c - s / 2, c + s / 2, count))
    grid = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([g.ravel() for g in grid])


def _box_corners(centers, size):
    signs = np.array(list(itertools.product((-0.5, 0.5), repeat=3)))
    return (centers[:, None, :] + signs[None, :, :] * size).reshape(-1, 3)


def _feasible(predicate, center, size, resolution, max_per_axis=None):
    corners = _box_corners(center[None, :], size)
    if not np.all(predicate(corners)):
        return False
    lattice = _box_lattice(center, size, resolution, max_per_axis)
    return bool(np.all(predicate(lattice)))


def _best_scale(predicate, center, base_size, mu_hi, scale_tol, resolution):
    """Largest feasible mu at this center by bisection; 0 if none.

    The search probes a capped lattice (full-resolution verification of
    the winning box happens once at the end of the search).
    """

    def ok(mu):
        return _feasible(
            predicate, center, mu * base_size, resolution, max_per_axis=9
        )

    if not ok(scale_tol):
        return 0.0
    lo, hi = scale_tol, mu_hi
    if ok(hi):
        return hi
    while hi - lo > scale_tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def _center_grid(lower, upper, step):
    # odd point counts keep the region midpoint on the grid, so symmetric
    # workspaces are probed at their exact center
    axes = []
    for lo, hi in zip(lower, upper):
        half = 0.5 * (hi - lo)
        if half <= 0:
            axes.append(np.array([lo]))
            continue
        n_half = max(1, int(np.ceil(half / step)))
        axes.append(np.linspace(lo, hi, 2 * n_half + 1))
    grid = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([g.ravel() for g in grid])


def inscribe_box(
    workspace_predicate, base_size, search_region, resolution
) -> WorkspaceBox:
    """Largest translated copy of base_size scaled by mu inside the predicate.

    The transform is restricted to translations.  Candidate centers are
    searched coarse-to-fine over the region; the scale at each center is
    bisected until its interval is below one resolution step.  The
    returned box is re-verified on the full resolution lattice.  Ties in
    scale break toward the lexicographically smallest center.
    """
    base_size = np.asarray(base_size, dtype=float)
    if base_size.shape != (3,) or not np.all(base_size > 0):
        raise InvalidParams("base_size must be three positive extents")
    lower = np.asarray(search_region[0], dtype=float).reshape(3)
    upper = np.asarray(search_region[1], dtype=float).reshape(3)
    if np.any(upper < lower):
        raise InvalidParams("search region upper bound below lower bound")
    resolution = float(resolution)
    if resolution <= 0:
        raise InvalidParams("resolution must be positive")

    span = upper - lower
    mu_hi = float(np.max((span + np.max(base_size)) / base_size))
    mu_hi = max(mu_hi, 1.0)
    scale_tol = resolution / float(np.max(base_size))

    def grade(centers):
        best = []
        for center in centers:
            mu = _best_scale(
                workspace_predicate, center, base_size, mu_hi, scale_tol, resolution
            )
            best.append(mu)
        return np.array(best)

    step = float(np.max(span)) / 8.0 if np.max(span) > 0 else resolution
    step = max(step, resolution)
    centers = _center_grid(lower, upper, step)
    scores = grade(centers)
    while step > resolution:
        ranked = sorted(
            range(len(centers)), key=lambda i: (-scores[i], tuple(centers[i]))
        )
        seeds = [centers[i] for i in ranked[:3]]
        step = max(step / 2.0, resolution)
        refined = [np.array(seeds)]
        for seed in seeds:
            lo = np.maximum(lower, seed - 2 * step)
            hi = np.minimum(upper, seed + 2 * step)
            refined.append(_center_grid(lo, hi, step))
        centers = np.unique(np.vstack(refined), axis=0)
        scores = grade(centers)

    if not np.any(scores > 0):
        raise NoFeasibleBox(
            "no translation in the search region admits even the smallest box"
        )
    ranked = sorted(range(len(centers)), key=lambda i: (-scores[i], tuple(centers[i])))
    center = centers[ranked[0]]
    mu = scores[ranked[0]]
    # final verification at the requested resolution; back off if the
    # cheaper search lattice was optimistic
    while mu >= scale_tol and not _feasible(
        workspace_predicate, center, mu * base_size, resolution
    ):
        mu -= scale_tol
    if mu < scale_tol:
        raise NoFeasibleBox("search optimum failed full-resolution verification")
    return WorkspaceBox(
        scale=float(mu),
        transform=Pose.from_translation(center),
        base_size=base_size,
    )


# ----- input efforts -----


@dataclass(frozen=True)
class DynamicsInput:
    """Everything needed to evaluate actuation efforts along a trajectory.

    mass_matrix(q) -> n x n, coriolis(q, qdot) -> n x n, and
    gravity_friction(q) -> n are caller-supplied providers; jacobian maps
    joint rates to the 6-d tool twist and carries the external wrench
    back to the joints.
    """

    mass_matrix: object
    coriolis: object
    gravity_friction: object
    jacobian: np.ndarray
    external: Wrench
    q: np.ndarray
    qdot: np.ndarray
    qddot: np.ndarray

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.q, dtype=float))
        qdot = np.atleast_2d(np.asarray(self.qdot, dtype=float))
        qddot = np.atleast_2d(np.asarray(self.qddot, dtype=float))
        if not (q.shape == qdot.shape == qddot.shape):
            raise DimensionMismatch("trajectory sample arrays differ in shape")
        jacobian = np.asarray(self.jacobian, dtype=float)
        if jacobian.ndim != 2 or jacobian.shape != (6, q.shape[1]):
            raise DimensionMismatch(
                f"jacobian must be 6 x {q.shape[1]}, got {jacobian.shape}"
            )
        object.__setattr__(self, "q", _freeze(q))
        object.__setattr__(self, "qdot", _freeze(qdot))
        object.__setattr__(self, "qddot", _freeze(qddot))
        object.__setattr__(self, "jacobian", _freeze(jacobian))

    @property
    def n_samples(self) -> int:
        return self.q.shape[0]

    @property
    def n_joints(self) -> int:
        return self.q.shape[1]


@dataclass(frozen=True)
class EffortProfile:
    """Per-sample actuation efforts with per-actuator peak and RMS."""

    efforts: np.ndarray
    peak: np.ndarray
    rms: np.ndarray


def input_efforts(data: DynamicsInput) -> EffortProfile:
    """tau = M(q) qddot + C(q, qdot) qdot + G(q) + J^T f per sample."""
    n = data.n_joints
    load = data.jacobian.T @ data.external.as_vector()
    efforts = np.empty((data.n_samples, n))
    for i in range(data.n_samples):
        mass = np.asarray(data.mass_matrix(data.q[i]), dtype=float)
        if mass.shape != (n, n):
            raise DimensionMismatch(f"mass matrix must be {n} x {n}")
        if np.abs(mass - mass.T).max() > 1e-8 * max(np.abs(mass).max(), 1.0):
            raise InvalidParams("mass matrix must be symmetric")
        if np.any(np.linalg.eigvalsh(0.5 * (mass + mass.T)) <= 0):
            raise InvalidParams("mass matrix must be positive definite")
        coriolis = np.asarray(data.coriolis(data.q[i], data.qdot[i]), dtype=float)
        if coriolis.shape != (n, n):
            raise DimensionMismatch(f"coriolis matrix must be {n} x {n}")
        gravity = np.asarray(data.gravity_friction(data.q[i]), dtype=float)
        if gravity.shape != (n,):
            raise DimensionMismatch(f"gravity/friction must be length {n}")
        efforts[i] = mass @ data.qddot[i] + coriolis @ data.qdot[i] + gravity + load
    return EffortProfile(
        efforts=efforts,
        peak=np.abs(efforts).max(axis=0),
        rms=np.sqrt(np.mean(efforts**2, axis=0)),
    )
