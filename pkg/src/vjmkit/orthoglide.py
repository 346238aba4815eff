"""Model and milling studies for a 3-dof translational parallel machine.

Three orthogonal legs, each a locked prismatic actuator followed by a
foot spring and a parallelogram reduced to one equivalent bar with a
6-dof spring.  The bar pivots on a passive pitch/yaw pair at the foot;
matching fixed counter-rotations at the platform end keep the platform
parallel, which is the constraint the parallelogram exists to provide.
The studies sweep a planar cutting force in direction and magnitude and
map worst-case deflection over workspace planes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    InvalidParams,
    NoConvergence,
    SingularConfiguration,
    Unreachable,
    VjmError,
)
from .model import (
    ActiveJoint,
    FixedTransform,
    ManipulatorModel,
    PassiveJoint,
    SerialChainModel,
    VirtualSpring,
)
from .spatial import Pose, Wrench, _freeze, small_rotation, vec3
from .statics import deflection_under_load

# diagonal bar compliances (x,y,z translations mm/N then rotations
# rad/(N*mm), bar frame, x along the bar) for the two identified designs
BAR_COMPLIANCE_TABLES = {
    "original": (4.55e-5, 2.33e-1, 5.08e-2, 2.88e-5, 1.50e-6, 7.19e-6),
    "revised": (3.10e-5, 3.54e-1, 6.91e-2, 0.39e-5, 0.33e-6, 1.74e-6),
}

# the machining requirement is quoted once per cube size; both are kept
# as presets and nothing in the package prefers one
WORKSPACE_CUBE_EDGES = {"cube_200": 200.0, "cube_500": 500.0}

# reference workpoints of the milling study [mm]
STUDY_WORKPOINTS = (
    (0.0, 0.0, 0.0),
    (-200.0, -200.0, -200.0),
    (300.0, 300.0, 300.0),
    (-200.0, 300.0, 0.0),
)

DEFAULT_FORCE = 300.0
DEFAULT_ACTUATOR_STIFFNESS = 1.0e6
FOOT_COMPLIANCE_FRACTION = 1.0e-2

# leg frames: cyclic axis permutations taking local x to the world x, y,
# and z actuator axes
_CYCLE = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
LEG_FRAMES = (np.eye(3), _CYCLE, _CYCLE @ _CYCLE)

_EX = np.array([1.0, 0.0, 0.0])
_EY = np.array([0.0, 1.0, 0.0])
_EZ = np.array([0.0, 0.0, 1.0])


def _check_compliance(matrix, name):
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape != (6, 6):
        raise InvalidParams(f"{name} must be 6 x 6")
    if not np.all(np.isfinite(matrix)):
        raise InvalidParams(f"{name} entries must be finite")
    if np.abs(matrix - matrix.T).max() > 1e-9 * max(np.abs(matrix).max(), 1.0):
        raise InvalidParams(f"{name} must be symmetric")
    if np.any(np.linalg.eigvalsh(0.5 * (matrix + matrix.T)) <= 0):
        raise InvalidParams(f"{name} must be positive definite")
    return _freeze(matrix)


@dataclass(frozen=True)
class OrthoglideParams:
    """Geometry and elasticity of the three identical legs.

    bar_length and bar_width are the parallelogram length and width;
    platform_offset is the distance from the bar attachment to the tool
    point along the leg axis.  Units: mm, N/mm, and the compliance
    matrices mm/N / rad/(N*mm).
    """

    bar_length: float
    bar_width: float
    platform_offset: float
    actuator_stiffness: float
    foot_compliance: np.ndarray
    bar_compliance: np.ndarray

    def __post_init__(self):
        for name in ("bar_length", "bar_width", "platform_offset"):
            value = float(getattr(self, name))
            if not value > 0:
                raise InvalidParams(f"{name} must be positive")
            object.__setattr__(self, name, value)
        if not float(self.actuator_stiffness) > 0:
            raise InvalidParams("actuator_stiffness must be positive")
        object.__setattr__(self, "actuator_stiffness", float(self.actuator_stiffness))
        object.__setattr__(
            self, "foot_compliance", _check_compliance(self.foot_compliance, "foot_compliance")
        )
        object.__setattr__(
            self, "bar_compliance", _check_compliance(self.bar_compliance, "bar_compliance")
        )

    @classmethod
    def original(cls) -> "OrthoglideParams":
        return cls._from_table("original", bar_length=310.0)

    @classmethod
    def revised(cls) -> "OrthoglideParams":
        # the revised design lengthened the bar but the new length is
        # not published; 650 mm reaches every study workpoint and
        # reproduces the reported anisotropy levels (corner ratio near
        # 7, about 1 mm worst deflection at 300 N)
        return cls._from_table("revised", bar_length=650.0)

    @classmethod
    def _from_table(cls, variant, bar_length) -> "OrthoglideParams":
        bar = np.diag(BAR_COMPLIANCE_TABLES[variant])
        return cls(
            bar_length=bar_length,
            bar_width=100.0,
            platform_offset=31.0,
            actuator_stiffness=DEFAULT_ACTUATOR_STIFFNESS,
            foot_compliance=FOOT_COMPLIANCE_FRACTION * bar,
            bar_compliance=bar,
        )


# ----- kinematics -----


def _leg_abscissa(params, point, leg) -> float:
    """Along-axis coordinate of the bar's platform end for one leg."""
    return float(point[leg] + params.platform_offset)


def _leg_placement(params, point, leg):
    """Locked actuator value and bar angles (alpha, beta) for one leg."""
    point = vec3(point)
    along = _leg_abscissa(params, point, leg)
    radicand = params.bar_length**2 - float(point @ point) + float(point[leg]) ** 2
    if radicand <= 0.0:
        raise Unreachable(
            f"point {point.tolist()} is outside leg {leg}'s reach"
        )
    reach = np.sqrt(radicand)
    rho = along - reach
    # bar direction in the leg frame
    frame = LEG_FRAMES[leg]
    attachment = point + params.platform_offset * frame[:, 0]
    foot = rho * frame[:, 0]
    direction = frame.T @ (attachment - foot) / params.bar_length
    beta = float(np.arcsin(np.clip(direction[1], -1.0, 1.0)))
    alpha = float(np.arctan2(-direction[2], direction[0]))
    return rho, alpha, beta


def inverse_kinematics(params: OrthoglideParams, point) -> np.ndarray:
    """Locked prismatic values that place the tool point, one per leg.

    Of the two closure solutions per leg the one with the bar tilted
    forward along the actuator axis is kept, the same assembly mode at
    every reachable point.
    """
    return np.array([_leg_placement(params, point, leg)[0] for leg in range(3)])


def forward_position(params: OrthoglideParams, q, initial=None) -> np.ndarray:
    """Tool point reached by rigid legs at the given actuator values."""
    q = np.asarray(q, dtype=float)
    if q.shape != (3,):
        raise InvalidParams("expected three actuator values")
    # bar base ends, offset by the platform radius so the unknown is the
    # tool point itself
    anchors = np.array(
        [(q[leg] - params.platform_offset) * LEG_FRAMES[leg][:, 0] for leg in range(3)]
    )
    point = np.zeros(3) if initial is None else vec3(initial).copy()
    target = params.bar_length**2
    for _ in range(100):
        offsets = point - anchors
        residual = np.einsum("ij,ij->i", offsets, offsets) - target
        if np.max(np.abs(residual)) < 1e-12 * target:
            return point
        jacobian = 2.0 * offsets
        try:
            step = np.linalg.solve(jacobian, -residual)
        except np.linalg.LinAlgError as exc:
            raise SingularConfiguration(
                "legs are collinear; tool position is not determined"
            ) from exc
        point = point + step
    raise NoConvergence("tool position iteration did not converge")


# ----- model construction -----


def _leg_chain(params: OrthoglideParams, point, leg) -> SerialChainModel:
    # Passive pitch/yaw sit at the foot end only.  Mirroring them as
    # fixed counter-rotations at the platform end is what keeps the
    # platform parallel: releasing four independent rotations instead
    # would leave platform moments resisted by nothing but the three bar
    # torsion springs, and the assembly collapses under the study loads
    # away from the center.
    rho, alpha, beta = _leg_placement(params, point, leg)
    frame = LEG_FRAMES[leg]
    bar_stiffness = np.linalg.inv(params.bar_compliance)
    foot_stiffness = np.linalg.inv(params.foot_compliance)
    return SerialChainModel(
        elements=(
            ActiveJoint("prismatic", _EX, locked_value=rho, name="drive"),
            VirtualSpring.along(
                "prismatic", _EX, params.actuator_stiffness, name="actuator"
            ),
            VirtualSpring.six_dof(foot_stiffness, name="foot"),
            PassiveJoint("revolute", _EY, nominal=alpha, name="foot_pitch"),
            PassiveJoint("revolute", _EZ, nominal=beta, name="foot_yaw"),
            FixedTransform(Pose.from_translation(params.bar_length * _EX), name="bar"),
            VirtualSpring.six_dof(bar_stiffness, name="bar"),
            FixedTransform(
                Pose(position=np.zeros(3), rotation=small_rotation(-beta * _EZ)),
                name="platform_yaw",
            ),
            FixedTransform(
                Pose(position=np.zeros(3), rotation=small_rotation(-alpha * _EY)),
                name="platform_pitch",
            ),
        ),
        base_pose=Pose(position=np.zeros(3), rotation=frame),
        tool_transform=Pose(
            position=np.array([-params.platform_offset, 0.0, 0.0]),
            rotation=frame.T,
        ),
        name=f"leg_{'xyz'[leg]}",
    )


def place_at(params: OrthoglideParams, point) -> ManipulatorModel:
    """Manipulator assembled with the tool at the given workpoint."""
    point = vec3(point)
    return ManipulatorModel(
        chains=tuple(_leg_chain(params, point, leg) for leg in range(3)),
        name="orthoglide",
    )


def build_orthoglide(params: OrthoglideParams) -> ManipulatorModel:
    """Manipulator at its nominal (isotropic) configuration."""
    return place_at(params, np.zeros(3))


# ----- studies -----


@dataclass(frozen=True)
class SweepSample:
    """One sweep evaluation: failed samples carry the error text."""

    input_value: float
    deflection: object
    planar_norm: float
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


@dataclass(frozen=True)
class SweepResult:
    kind: str
    point: np.ndarray
    samples: tuple
    force: float = None
    direction: np.ndarray = None
    linearity_deviation: float = None

    def __post_init__(self):
        object.__setattr__(self, "point", _freeze(vec3(self.point)))
        object.__setattr__(self, "samples", tuple(self.samples))
        if self.direction is not None:
            object.__setattr__(self, "direction", _freeze(vec3(self.direction)))

    @property
    def inputs(self) -> np.ndarray:
        return np.array([s.input_value for s in self.samples])

    @property
    def norms(self) -> np.ndarray:
        return np.array([s.planar_norm for s in self.samples])

    @property
    def ok_fraction(self) -> float:
        if not self.samples:
            return 0.0
        return sum(1 for s in self.samples if s.ok) / len(self.samples)


def _planar_norm(deflection) -> float:
    return float(np.hypot(deflection.translation[0], deflection.translation[1]))


def _deflection_sample(model, nominal, wrench, input_value) -> SweepSample:
    try:
        deflection = deflection_under_load(model, nominal, wrench)
    except (NoConvergence, SingularConfiguration) as exc:
        return SweepSample(
            input_value=float(input_value),
            deflection=None,
            planar_norm=np.nan,
            error=f"{type(exc).__name__}: {exc}",
        )
    return SweepSample(
        input_value=float(input_value),
        deflection=deflection,
        planar_norm=_planar_norm(deflection),
    )


def sweep_angles(n_angles: int) -> np.ndarray:
    """Evenly spaced force directions over the full circle [deg]."""
    if n_angles < 1:
        raise InvalidParams("need at least one angle")
    return -180.0 + 360.0 * np.arange(n_angles) / n_angles


def direction_sweep(
    params: OrthoglideParams, point, magnitude: float, n_angles: int = 72
) -> SweepResult:
    """Planar force of fixed size rotated over the full circle.

    Records the loaded deflection and its in-plane norm per direction;
    solver failures are kept as failed samples rather than aborting the
    sweep.
    """
    point = vec3(point)
    if magnitude < 0:
        raise InvalidParams("force magnitude must be non-negative")
    model = place_at(params, point)
    nominal = Pose.from_translation(point)
    samples = []
    for angle in sweep_angles(n_angles):
        psi = np.deg2rad(angle)
        wrench = Wrench(
            force=(magnitude * np.cos(psi), magnitude * np.sin(psi), 0.0)
        )
        samples.append(_deflection_sample(model, nominal, wrench, angle))
    return SweepResult(
        kind="direction", point=point, samples=tuple(samples), force=float(magnitude)
    )


def magnitude_sweep(
    params: OrthoglideParams, point, direction, magnitudes
) -> SweepResult:
    """Force size swept along one fixed direction.

    The linearity deviation is the largest relative departure of the
    deflection norm from the best line through the origin.
    """
    point = vec3(point)
    direction = vec3(direction)
    norm = np.linalg.norm(direction)
    if norm == 0:
        raise InvalidParams("direction must be nonzero")
    direction = direction / norm
    magnitudes = [float(m) for m in magnitudes]
    if any(m < 0 for m in magnitudes):
        raise InvalidParams("force magnitudes must be non-negative")
    model = place_at(params, point)
    nominal = Pose.from_translation(point)
    samples = [
        _deflection_sample(model, nominal, Wrench(force=m * direction), m)
        for m in sorted(magnitudes)
    ]
    deviation = _linearity_deviation(samples)
    return SweepResult(
        kind="magnitude",
        point=point,
        samples=tuple(samples),
        direction=direction,
        linearity_deviation=deviation,
    )


def _linearity_deviation(samples) -> float:
    pairs = [
        (s.input_value, s.planar_norm)
        for s in samples
        if s.ok and s.input_value > 0
    ]
    if len(pairs) < 2:
        return None
    m = np.array([p[0] for p in pairs])
    d = np.array([p[1] for p in pairs])
    slope = float(m @ d) / float(m @ m)
    if slope <= 0:
        return None
    return float(np.max(np.abs(d - slope * m) / (slope * m)))


@dataclass(frozen=True)
class StudyGrid:
    """Regular x/y grid on one z plane with a fixed planar force size."""

    plane_z: float
    x_range: tuple
    y_range: tuple
    step: float
    force: float
    n_directions: int = 36

    def __post_init__(self):
        if self.step <= 0:
            raise InvalidParams("grid step must be positive")
        if self.force < 0:
            raise InvalidParams("force must be non-negative")
        if self.n_directions < 1:
            raise InvalidParams("need at least one force direction")
        for name in ("x_range", "y_range"):
            lo, hi = (float(v) for v in getattr(self, name))
            if hi < lo:
                raise InvalidParams(f"{name} upper bound below lower bound")
            object.__setattr__(self, name, (lo, hi))
        object.__setattr__(self, "plane_z", float(self.plane_z))
        object.__setattr__(self, "step", float(self.step))
        object.__setattr__(self, "force", float(self.force))

    def axis(self, which: str) -> np.ndarray:
        lo, hi = getattr(self, f"{which}_range")
        count = int(np.floor((hi - lo) / self.step + 1e-9)) + 1
        return lo + self.step * np.arange(count)


@dataclass(frozen=True)
class ErrorMap:
    """Worst and best planar deflection per grid point; NaN where failed."""

    grid: StudyGrid
    x: np.ndarray
    y: np.ndarray
    worst: np.ndarray
    best: np.ndarray
    worst_angle: np.ndarray
    failures: tuple = ()

    @property
    def ok_fraction(self) -> float:
        return float(np.mean(np.isfinite(self.worst)))


def error_map(params: OrthoglideParams, grid: StudyGrid) -> ErrorMap:
    """Worst-case deflection over sampled force directions per grid point."""
    xs = grid.axis("x")
    ys = grid.axis("y")
    worst = np.full((len(xs), len(ys)), np.nan)
    best = np.full((len(xs), len(ys)), np.nan)
    worst_angle = np.full((len(xs), len(ys)), np.nan)
    failures = []
    for i, x in enumerate(xs):
        for j, y in enumerate(ys):
            point = np.array([x, y, grid.plane_z])
            try:
                sweep = direction_sweep(
                    params, point, grid.force, n_angles=grid.n_directions
                )
            except (Unreachable, VjmError) as exc:
                failures.append((float(x), float(y), f"{type(exc).__name__}: {exc}"))
                continue
            norms = sweep.norms
            good = np.isfinite(norms)
            if not good.any():
                failures.append((float(x), float(y), "all directions failed"))
                continue
            worst[i, j] = np.max(norms[good])
            best[i, j] = np.min(norms[good])
            worst_angle[i, j] = sweep.inputs[good][np.argmax(norms[good])]
    return ErrorMap(
        grid=grid,
        x=xs,
        y=ys,
        worst=worst,
        best=best,
        worst_angle=worst_angle,
        failures=tuple(failures),
    )


# ----- serialization -----


def params_to_dict(params: OrthoglideParams) -> dict:
    out = {
        "bar_length": params.bar_length,
        "bar_width": params.bar_width,
        "platform_offset": params.platform_offset,
        "actuator_stiffness": params.actuator_stiffness,
        "foot_compliance": params.foot_compliance.tolist(),
        "bar_compliance": params.bar_compliance.tolist(),
    }
    for variant, diag in BAR_COMPLIANCE_TABLES.items():
        if np.array_equal(params.bar_compliance, np.diag(diag)):
            out["table1_variant"] = variant
    return out


def params_from_dict(data: dict) -> OrthoglideParams:
    variant = data.get("table1_variant", "revised")
    if variant not in BAR_COMPLIANCE_TABLES:
        raise InvalidParams(
            f"unknown table1_variant {variant!r}; options: "
            f"{sorted(BAR_COMPLIANCE_TABLES)}"
        )
    base = (
        OrthoglideParams.original()
        if variant == "original"
        else OrthoglideParams.revised()
    )
    kwargs = {}
    for name in ("bar_length", "bar_width", "platform_offset", "actuator_stiffness"):
        if name in data:
            kwargs[name] = float(data[name])
    for name in ("foot_compliance", "bar_compliance"):
        if name in data:
            kwargs[name] = np.asarray(data[name], dtype=float)
    if "bar_compliance" in kwargs and "foot_compliance" not in kwargs:
        kwargs["foot_compliance"] = FOOT_COMPLIANCE_FRACTION * kwargs["bar_compliance"]
    return replace(base, **kwargs)


def save_orthoglide_params(params: OrthoglideParams, path) -> None:
    with open(path, "w") as handle:
        json.dump(params_to_dict(params), handle, indent=2, sort_keys=True)
        handle.write("\n")


def load_orthoglide_params(path) -> OrthoglideParams:
    with open(path) as handle:
        try:
            data = json.load(handle)
        except json.JSONDecodeError as exc:
            raise InvalidParams(f"parameter file is not valid JSON: {exc}") from exc
    return params_from_dict(data)


def _write_csv(path, header_fields, columns, rows):
    with open(path, "w", newline="") as handle:
        for key, value in header_fields.items():
            handle.write(f"# {key}={value}\n")
        writer = csv.writer(handle)
        writer.writerow(columns)
        writer.writerows(rows)


def write_sweep_csv(result: SweepResult, path) -> None:
    """One row per sample; polar norm and Cartesian components together."""
    header = {
        "sweep": result.kind,
        "point_mm": ",".join(f"{v:g}" for v in result.point),
    }
    if result.kind == "direction":
        header["force_N"] = f"{result.force:g}"
        input_column = "angle_deg"
    else:
        header["direction"] = ",".join(f"{v:g}" for v in result.direction)
        input_column = "force_N"
        if result.linearity_deviation is not None:
            header["linearity_deviation"] = f"{result.linearity_deviation:.6g}"
    rows = []
    for s in result.samples:
        if s.ok:
            d = s.deflection
            rows.append(
                [s.input_value]
                + [f"{v:.9g}" for v in d.translation]
                + [f"{v:.9g}" for v in d.rotation]
                + [f"{s.planar_norm:.9g}", ""]
            )
        else:
            rows.append([s.input_value] + [""] * 7 + [s.error])
    _write_csv(
        path,
        header,
        [input_column, "dx_mm", "dy_mm", "dz_mm", "rx_rad", "ry_rad", "rz_rad",
         "planar_norm_mm", "errors"],
        rows,
    )


def write_error_map_csv(result: ErrorMap, path) -> None:
    header = {
        "plane_z_mm": f"{result.grid.plane_z:g}",
        "force_N": f"{result.grid.force:g}",
        "step_mm": f"{result.grid.step:g}",
        "n_directions": str(result.grid.n_directions),
    }
    failed = {(fx, fy): message for fx, fy, message in result.failures}
    rows = []
    for i, x in enumerate(result.x):
        for j, y in enumerate(result.y):
            if np.isfinite(result.worst[i, j]):
                rows.append(
                    [
                        f"{x:g}",
                        f"{y:g}",
                        f"{result.worst[i, j]:.9g}",
                        f"{result.best[i, j]:.9g}",
                        f"{result.worst_angle[i, j]:g}",
                        "",
                    ]
                )
            else:
                message = failed.get((float(x), float(y)), "failed")
                rows.append([f"{x:g}", f"{y:g}", "", "", "", message])
    _write_csv(
        path,
        header,
        ["x_mm", "y_mm", "worst_mm", "best_mm", "worst_angle_deg", "errors"],
        rows,
    )
