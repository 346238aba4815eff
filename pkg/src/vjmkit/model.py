"""Serial-chain manipulator descriptions and their differential kinematics.

A chain is an ordered list of elements walked from a base pose to a tool
frame: rigid transforms, locked active joints, passive joints (vector q),
and lumped virtual springs whose coordinates (vector theta) capture
actuator and link elasticity.  A manipulator is a set of such chains
rigidly grasping one platform frame.

Joint values are absolute: forward_geometry(chain, q0, 0) with
q0 = passive_nominals() reproduces the rigid nominal geometry.  Jacobian
columns are unit twists of the tool frame, translation rows first.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InputFormatError
from .spatial import Pose, Wrench, small_rotation, vec3

JOINT_TYPES = ("revolute", "prismatic")

# local coordinate order of a full 6-dof spring
_SIX_DOF_COORDS = (
    ("prismatic", (1.0, 0.0, 0.0)),
    ("prismatic", (0.0, 1.0, 0.0)),
    ("prismatic", (0.0, 0.0, 1.0)),
    ("revolute", (1.0, 0.0, 0.0)),
    ("revolute", (0.0, 1.0, 0.0)),
    ("revolute", (0.0, 0.0, 1.0)),
)


def _unit_axis(axis) -> np.ndarray:
    a = vec3(axis)
    norm = np.linalg.norm(a)
    if norm == 0.0:
        raise ValueError("joint axis must be nonzero")
    a = a / norm
    a.setflags(write=False)
    return a


def _check_joint_type(joint_type: str) -> str:
    if joint_type not in JOINT_TYPES:
        raise ValueError(f"joint type must be one of {JOINT_TYPES}, got {joint_type!r}")
    return joint_type


@dataclass(frozen=True)
class FixedTransform:
    """Rigid link: a constant pose inserted into the chain."""

    pose: Pose
    name: str = ""


@dataclass(frozen=True)
class ActiveJoint:
    """Actuated joint held at a locked value during elastic analysis."""

    joint_type: str
    axis: np.ndarray
    locked_value: float = 0.0
    name: str = ""

    def __post_init__(self):
        _check_joint_type(self.joint_type)
        object.__setattr__(self, "axis", _unit_axis(self.axis))
        object.__setattr__(self, "locked_value", float(self.locked_value))


@dataclass(frozen=True)
class PassiveJoint:
    """Unactuated joint; its coordinate is one entry of q.

    ``nominal`` is the rigid-geometry value, used as the solver's initial
    guess, not as an offset: the chain is evaluated at the q it is given.
    """

    joint_type: str
    axis: np.ndarray
    nominal: float = 0.0
    name: str = ""

    def __post_init__(self):
        _check_joint_type(self.joint_type)
        object.__setattr__(self, "axis", _unit_axis(self.axis))
        object.__setattr__(self, "nominal", float(self.nominal))


@dataclass(frozen=True)
class VirtualSpring:
    """Lumped elasticity contributing one theta coordinate per local axis.

    ``coordinates`` lists (joint_type, local_axis) in the order the
    deflections are composed; ``stiffness`` is the matching square matrix,
    symmetric positive definite.  Rest position is theta = 0.
    """

    stiffness: np.ndarray
    coordinates: tuple
    name: str = ""

    def __post_init__(self):
        coords = tuple(
            (_check_joint_type(jt), _unit_axis(ax)) for jt, ax in self.coordinates
        )
        if not coords:
            raise ValueError("spring needs at least one coordinate")
        object.__setattr__(self, "coordinates", coords)
        k = np.atleast_2d(np.asarray(self.stiffness, dtype=float))
        if k.shape != (len(coords), len(coords)):
            raise DimensionMismatch(
                f"stiffness {k.shape} does not match {len(coords)} coordinate(s)"
            )
        if not np.all(np.isfinite(k)):
            raise ValueError("spring stiffness contains non-finite entries")
        if np.linalg.norm(k - k.T) > 1e-8 * max(np.linalg.norm(k), 1.0):
            raise ValueError("spring stiffness must be symmetric")
        if np.min(np.linalg.eigvalsh(0.5 * (k + k.T))) <= 0.0:
            raise ValueError("spring stiffness must be positive definite")
        k.setflags(write=False)
        object.__setattr__(self, "stiffness", k)

    @classmethod
    def six_dof(cls, stiffness, name="") -> "VirtualSpring":
        """Full spatial spring: Tx, Ty, Tz then Rx, Ry, Rz in its local frame."""
        return cls(stiffness=stiffness, coordinates=_SIX_DOF_COORDS, name=name)

    @classmethod
    def along(cls, joint_type, axis, stiffness, name="") -> "VirtualSpring":
        """Single-coordinate spring about one local axis."""
        k = float(stiffness)
        return cls(stiffness=np.array([[k]]), coordinates=((joint_type, axis),),
                   name=name)

    @property
    def dof(self) -> int:
        return len(self.coordinates)


_ELEMENT_TYPES = (FixedTransform, ActiveJoint, PassiveJoint, VirtualSpring)


@dataclass(frozen=True)
class SerialChainModel:
    """Ordered elastic chain from a base pose to a tool frame."""

    elements: tuple
    base_pose: Pose = None
    tool_transform: Pose = None
    name: str = ""

    def __post_init__(self):
        elements = tuple(self.elements)
        for el in elements:
            if not isinstance(el, _ELEMENT_TYPES):
                raise TypeError(f"unsupported chain element {type(el).__name__}")
        object.__setattr__(self, "elements", elements)
        if self.base_pose is None:
            object.__setattr__(self, "base_pose", Pose.identity())
        if self.tool_transform is None:
            object.__setattr__(self, "tool_transform", Pose.identity())

    @property
    def n_passive(self) -> int:
        return sum(1 for el in self.elements if isinstance(el, PassiveJoint))

    @property
    def n_spring(self) -> int:
        return sum(el.dof for el in self.elements if isinstance(el, VirtualSpring))

    def passive_nominals(self) -> np.ndarray:
        return np.array(
            [el.nominal for el in self.elements if isinstance(el, PassiveJoint)]
        )

    def spring_stiffness(self) -> np.ndarray:
        """Block-diagonal K_theta over all spring coordinates, chain order."""
        blocks = [el.stiffness for el in self.elements if isinstance(el, VirtualSpring)]
        m = sum(b.shape[0] for b in blocks)
        k = np.zeros((m, m))
        at = 0
        for b in blocks:
            k[at : at + b.shape[0], at : at + b.shape[0]] = b
            at += b.shape[0]
        return k


@dataclass(frozen=True)
class ManipulatorModel:
    """Chains rigidly attached to one shared platform frame.

    Common reachability of the chains is checked when an assembly is
    solved, not at construction.
    """

    chains: tuple
    name: str = ""

    def __post_init__(self):
        chains = tuple(self.chains)
        if not chains:
            raise ValueError("manipulator needs at least one chain")
        for ch in chains:
            if not isinstance(ch, SerialChainModel):
                raise TypeError("chains must be SerialChainModel instances")
        object.__setattr__(self, "chains", chains)


# ----- kinematic walk -----


class _CoordinateTable:
    """Per-coordinate world quantities of one chain at a configuration.

    Arrays are indexed in chain order over passive and spring coordinates
    (active joints are locked and contribute none).  ``linear`` holds the
    translation half of each Jacobian column about the tool point.
    """

    __slots__ = (
        "axes",
        "origins",
        "is_revolute",
        "is_passive",
        "tool_pose",
        "linear",
        "angular",
    )

    def __init__(self, axes, origins, is_revolute, is_passive, tool_pose):
        self.axes = axes
        self.origins = origins
        self.is_revolute = is_revolute
        self.is_passive = is_passive
        self.tool_pose = tool_pose
        p = tool_pose.position
        lever = p - origins
        self.linear = np.where(
            is_revolute[:, None], np.cross(axes, lever), axes
        )
        self.angular = np.where(is_revolute[:, None], axes, 0.0)

    def jacobians(self):
        """(J_q 6 x n, J_theta 6 x m), translation rows first."""
        cols = np.hstack([self.linear, self.angular]).T  # (6, N)
        return cols[:, self.is_passive], cols[:, ~self.is_passive]


def _motion(joint_type, axis, value) -> Pose:
    if joint_type == "prismatic":
        return Pose.from_translation(axis * value)
    return Pose(position=np.zeros(3), rotation=small_rotation(axis * value))


def _check_lengths(chain, q, theta):
    q = np.atleast_1d(np.asarray(q, dtype=float)) if np.size(q) else np.zeros(0)
    theta = (
        np.atleast_1d(np.asarray(theta, dtype=float)) if np.size(theta) else np.zeros(0)
    )
    if q.shape != (chain.n_passive,):
        raise DimensionMismatch(
            f"q has shape {q.shape}, chain has {chain.n_passive} passive joint(s)"
        )
    if theta.shape != (chain.n_spring,):
        raise DimensionMismatch(
            f"theta has shape {theta.shape}, chain has {chain.n_spring} "
            "spring coordinate(s)"
        )
    return q, theta


def _coordinate_table(chain: SerialChainModel, q, theta) -> _CoordinateTable:
    q, theta = _check_lengths(chain, q, theta)
    axes, origins, revolute, passive = [], [], [], []
    pose = chain.base_pose
    iq = it = 0
    for el in chain.elements:
        if isinstance(el, FixedTransform):
            pose = pose.compose(el.pose)
        elif isinstance(el, ActiveJoint):
            pose = pose.compose(_motion(el.joint_type, el.axis, el.locked_value))
        elif isinstance(el, PassiveJoint):
            axes.append(pose.rotation @ el.axis)
            origins.append(pose.position)
            revolute.append(el.joint_type == "revolute")
            passive.append(True)
            pose = pose.compose(_motion(el.joint_type, el.axis, q[iq]))
            iq += 1
        else:  # VirtualSpring
            for joint_type, axis in el.coordinates:
                axes.append(pose.rotation @ axis)
                origins.append(pose.position)
                revolute.append(joint_type == "revolute")
                passive.append(False)
                pose = pose.compose(_motion(joint_type, axis, theta[it]))
                it += 1
    pose = pose.compose(chain.tool_transform)
    n = len(axes)
    return _CoordinateTable(
        axes=np.array(axes).reshape(n, 3),
        origins=np.array(origins).reshape(n, 3),
        is_revolute=np.array(revolute, dtype=bool),
        is_passive=np.array(passive, dtype=bool),
        tool_pose=pose,
    )


def forward_geometry(chain: SerialChainModel, q, theta) -> Pose:
    """Tool pose of the chain at passive values q and spring values theta."""
    return _coordinate_table(chain, q, theta).tool_pose


def chain_jacobians(chain: SerialChainModel, q, theta):
    """Unit-twist Jacobians (J_q: 6 x n, J_theta: 6 x m) about the tool point."""
    return _coordinate_table(chain, q, theta).jacobians()


# ----- derivative of the joint-torque map -----


def _torque_gradient(table: _CoordinateTable, wrench: Wrench) -> np.ndarray:
    """Exact G[i, j] = d(J_i^T F)/d(coordinate j) at fixed world wrench.

    Moving an earlier coordinate sweeps the axes and origins of the later
    ones as rigid bodies, while every coordinate moves the tool point by
    its own linear column; writing the torque as a scalar triple product
    and differentiating gives three bilinear forms:

        revolute i,  any j >= i:           -(a_i x f) . v_j
        revolute i,  revolute j < i:       (v_i x f + a_i x m) . a_j
        prismatic i, revolute j < i:       (a_i x f) . a_j

    with all other pairs zero.  G is not symmetric for nonzero moments: a
    wrench fixed in world orientation is not conservative in rotation.
    """
    a, v = table.axes, table.linear
    f, m = wrench.force, wrench.moment
    n = len(a)
    if n == 0:
        return np.zeros((0, 0))
    af = np.cross(a, f)
    t1 = (np.cross(v, f) + np.cross(a, m)) @ a.T
    t2 = af @ a.T
    t3 = -af @ v.T
    rev = table.is_revolute
    idx = np.arange(n)
    before = idx[None, :] < idx[:, None]  # [i, j] true when j precedes i
    g = np.zeros((n, n))
    mask = rev[:, None] & ~before
    g[mask] = t3[mask]
    mask = rev[:, None] & rev[None, :] & before
    g[mask] = t1[mask]
    mask = ~rev[:, None] & rev[None, :] & before
    g[mask] = t2[mask]
    return g


def _gradient_blocks(table: _CoordinateTable, wrench: Wrench):
    """Exact gradient split into (G_qq, G_qt, G_tq, G_tt)."""
    g = _torque_gradient(table, wrench)
    p = table.is_passive
    return g[np.ix_(p, p)], g[np.ix_(p, ~p)], g[np.ix_(~p, p)], g[np.ix_(~p, ~p)]


def potential_hessians(chain: SerialChainModel, q, theta, wrench: Wrench):
    """Second derivatives of the load potential of a constant wrench.

    Returns (H_qq: n x n, H_qtheta: n x m, H_thetatheta: m x m) with the
    symmetry a scalar potential requires (H_thetaq is H_qtheta transposed).
    For a pure force these equal the exact torque-map gradient; a constant
    world moment has no single-valued potential over finite rotations, and
    its blocks are the symmetric part of that gradient.
    """
    table = _coordinate_table(chain, q, theta)
    g_qq, g_qt, g_tq, g_tt = _gradient_blocks(table, wrench)
    h_qq = 0.5 * (g_qq + g_qq.T)
    h_tt = 0.5 * (g_tt + g_tt.T)
    h_qt = 0.5 * (g_qt + g_tq.T)
    return h_qq, h_qt, h_tt


# ----- JSON description files -----

_UNITS = {"length": "mm", "force": "N", "moment": "N*mm", "angle": "rad"}


def _pose_to_dict(pose: Pose) -> dict:
    return {
        "position": [float(x) for x in pose.position],
        "rotation": [[float(x) for x in row] for row in pose.rotation],
    }


def _pose_from_dict(d, where) -> Pose:
    try:
        return Pose(
            position=np.asarray(d["position"], dtype=float),
            rotation=np.asarray(d["rotation"], dtype=float),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InputFormatError(f"{where}: bad pose record ({exc})") from exc


def _element_to_dict(el) -> dict:
    if isinstance(el, FixedTransform):
        d = {"kind": "fixed_transform", "pose": _pose_to_dict(el.pose)}
    elif isinstance(el, ActiveJoint):
        d = {
            "kind": "active_joint",
            "type": el.joint_type,
            "axis": [float(x) for x in el.axis],
            "locked_value": el.locked_value,
        }
    elif isinstance(el, PassiveJoint):
        d = {
            "kind": "passive_joint",
            "type": el.joint_type,
            "axis": [float(x) for x in el.axis],
            "nominal": el.nominal,
        }
    else:
        if el.dof == 1:
            (joint_type, axis), = el.coordinates
            d = {
                "kind": "virtual_spring",
                "dof": 1,
                "type": joint_type,
                "axis": [float(x) for x in axis],
                "stiffness": float(el.stiffness[0, 0]),
            }
        else:
            d = {
                "kind": "virtual_spring",
                "dof": el.dof,
                "stiffness": [[float(x) for x in row] for row in el.stiffness],
            }
            if not _is_default_six_dof(el.coordinates):
                d["coordinates"] = [
                    {"type": jt, "axis": [float(x) for x in ax]}
                    for jt, ax in el.coordinates
                ]
    if el.name:
        d["name"] = el.name
    return d


def _is_default_six_dof(coordinates) -> bool:
    if len(coordinates) != 6:
        return False
    return all(
        jt == ref_jt and np.array_equal(ax, np.asarray(ref_ax))
        for (jt, ax), (ref_jt, ref_ax) in zip(coordinates, _SIX_DOF_COORDS)
    )


def _element_from_dict(d, where):
    kind = d.get("kind")
    try:
        if kind == "fixed_transform":
            return FixedTransform(pose=_pose_from_dict(d["pose"], where),
                                  name=d.get("name", ""))
        if kind == "active_joint":
            return ActiveJoint(joint_type=d["type"], axis=d["axis"],
                               locked_value=d.get("locked_value", 0.0),
                               name=d.get("name", ""))
        if kind == "passive_joint":
            return PassiveJoint(joint_type=d["type"], axis=d["axis"],
                                nominal=d.get("nominal", 0.0),
                                name=d.get("name", ""))
        if kind == "virtual_spring":
            if "coordinates" in d:
                coords = tuple((c["type"], c["axis"]) for c in d["coordinates"])
                return VirtualSpring(stiffness=d["stiffness"], coordinates=coords,
                                     name=d.get("name", ""))
            if d.get("dof") == 1:
                return VirtualSpring.along(d["type"], d["axis"], d["stiffness"],
                                           name=d.get("name", ""))
            if d.get("dof") == 6:
                return VirtualSpring.six_dof(d["stiffness"], name=d.get("name", ""))
            raise InputFormatError(
                f"{where}: virtual_spring needs dof 1 or 6, or explicit coordinates"
            )
    except InputFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise InputFormatError(f"{where}: bad {kind} record ({exc})") from exc
    raise InputFormatError(f"{where}: unknown element kind {kind!r}")


def manipulator_to_dict(model: ManipulatorModel) -> dict:
    return {
        "name": model.name,
        "units": dict(_UNITS),
        "chains": [
            {
                "name": ch.name,
                "base_pose": _pose_to_dict(ch.base_pose),
                "elements": [_element_to_dict(el) for el in ch.elements],
                "tool_transform": _pose_to_dict(ch.tool_transform),
            }
            for ch in model.chains
        ],
    }


def manipulator_from_dict(d, where="manipulator") -> ManipulatorModel:
    if "chains" not in d or not d["chains"]:
        raise InputFormatError(f"{where}: missing or empty 'chains'")
    chains = []
    for ic, cd in enumerate(d["chains"]):
        tag = f"{where}: chain {ic}"
        elements = [
            _element_from_dict(ed, f"{tag}, element {ie}")
            for ie, ed in enumerate(cd.get("elements", []))
        ]
        base = (_pose_from_dict(cd["base_pose"], tag)
                if "base_pose" in cd else Pose.identity())
        tool = (_pose_from_dict(cd["tool_transform"], tag)
                if "tool_transform" in cd else Pose.identity())
        chains.append(
            SerialChainModel(elements=tuple(elements), base_pose=base,
                             tool_transform=tool, name=cd.get("name", ""))
        )
    return ManipulatorModel(chains=tuple(chains), name=d.get("name", ""))


def save_manipulator(path, model: ManipulatorModel) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manipulator_to_dict(model), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manipulator(path) -> ManipulatorModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputFormatError(f"{path}: invalid JSON ({exc})") from exc
    return manipulator_from_dict(d, where=str(path))
