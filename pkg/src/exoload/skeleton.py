"""Scaled rigid-body human model: construction, forward kinematics, whole-body
center of mass, and task-frame Jacobians.

The canonical human model has 19 segments linked by 18 compound joints for 43
actuated revolute DoFs (11 back and neck, 9 per arm including the
sternoclavicular joint, 7 per leg) plus a 6-DoF free-floating pelvis base,
giving 49 velocity coordinates ordered as::

    [base linear velocity (world, m/s),
     base angular velocity (world, rad/s),
     joint rates (rad/s)]

All segment frames are world-aligned in the zero configuration, so the upright
reference pose has every rotation equal to identity. World axes: X forward,
Y left, Z up.

Compound joints are decomposed internally into chains of single-axis revolute
links; intermediate links are massless and the real segment rides on the last
link of its joint. Custom (non-human) models can be assembled from the same
``Segment``/``Joint`` building blocks, which is how the dynamics test oracles
construct single-hinge reductions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .anthropometry import AnthropometricProfile, CoefficientTable, get_table
from .errors import ValidationError
from .geometry import (
    IDENTITY_QUAT,
    axis_angle_matrix,
    matrix_to_quat,
    quat_normalize,
    quat_to_matrix,
)

QUAT_NORM_TOL = 1e-9

BASE_SEGMENT = "pelvis"

# Canonical-layout geometry constants (ratios applied to table-scaled lengths).
HIP_HALF_WIDTH_RATIO = 0.60  # of pelvis length
CLAVICLE_ANCHOR_HEIGHT_RATIO = 0.95  # of thorax length

AXIS_X = np.array([1.0, 0.0, 0.0])
AXIS_Y = np.array([0.0, 1.0, 0.0])
AXIS_Z = np.array([0.0, 0.0, 1.0])

# Landmark aliases: task frames named after anatomical points resolve to the
# segment whose origin sits at that point.
FRAME_ALIASES: dict[str, str] = {
    "left_shoulder": "left_upper_arm",
    "right_shoulder": "right_upper_arm",
    "left_elbow": "left_forearm",
    "right_elbow": "right_forearm",
    "left_wrist": "left_hand",
    "right_wrist": "right_hand",
}


@dataclass(frozen=True)
class Segment:
    """Rigid body with inertial data expressed in its own frame."""

    name: str
    length: float
    mass: float
    com_offset: np.ndarray  # (3,) m, segment frame
    inertia: np.ndarray  # (3, 3) kg m^2 about the segment CoM, segment frame


@dataclass(frozen=True)
class Dof:
    name: str
    axis: np.ndarray  # (3,) unit, in the frame reached by the previous DoF
    lower: float = -np.pi
    upper: float = np.pi


@dataclass(frozen=True)
class Joint:
    """Compound joint: an anchor point in the parent frame plus an ordered
    chain of revolute DoFs."""

    name: str
    parent: str
    child: str
    anchor: np.ndarray  # (3,) m, parent segment frame
    dofs: tuple[Dof, ...]


@dataclass(frozen=True)
class JointConfiguration:
    """Free-floating base pose plus the actuated joint angles."""

    base_position: np.ndarray  # (3,) m
    base_orientation: np.ndarray  # (4,) unit quaternion (w, x, y, z)
    joint_angles: np.ndarray  # (n_dofs,) rad

    def __post_init__(self) -> None:
        object.__setattr__(self, "base_position", np.asarray(self.base_position, dtype=float))
        object.__setattr__(self, "base_orientation", np.asarray(self.base_orientation, dtype=float))
        object.__setattr__(self, "joint_angles", np.asarray(self.joint_angles, dtype=float))
        norm = float(np.linalg.norm(self.base_orientation))
        if abs(norm - 1.0) > QUAT_NORM_TOL:
            raise ValidationError(f"base orientation quaternion norm {norm!r} is not 1")


@dataclass(frozen=True)
class Pose:
    position: np.ndarray  # (3,)
    rotation: np.ndarray  # (3, 3) world-from-segment

    @property
    def quaternion(self) -> np.ndarray:
        return matrix_to_quat(self.rotation)


class SkeletonModel:
    """Immutable kinematic tree. Safe to share across threads; all evaluation
    functions are pure in (model, configuration)."""

    def __init__(
        self,
        segments: Iterable[Segment],
        joints: Iterable[Joint],
        base_segment: str = BASE_SEGMENT,
        frame_aliases: Mapping[str, str] | None = None,
        reference_base_height: float = 0.0,
        profile: AnthropometricProfile | None = None,
    ):
        self.segments: tuple[Segment, ...] = tuple(segments)
        self.joints: tuple[Joint, ...] = tuple(joints)
        self.base_segment = base_segment
        self.frame_aliases = dict(frame_aliases or {})
        self.reference_base_height = reference_base_height
        self.profile = profile

        self.segment_index = {s.name: i for i, s in enumerate(self.segments)}
        if len(self.segment_index) != len(self.segments):
            raise ValidationError("duplicate segment names")
        if base_segment not in self.segment_index:
            raise ValidationError(f"base segment {base_segment!r} not among segments")

        self._build_chain()
        self._validate_tree()

    # -- structure -----------------------------------------------------

    def _build_chain(self) -> None:
        n = sum(len(j.dofs) for j in self.joints)
        self.n_joint_dofs = n
        self.n_velocity = 6 + n

        self._dof_parent = np.full(n, -1, dtype=int)  # -1 = base link
        self._dof_offset = np.zeros((n, 3))  # in parent link frame
        self._dof_axis = np.zeros((n, 3))
        self.dof_names: list[str] = []
        self.dof_lower = np.zeros(n)
        self.dof_upper = np.zeros(n)
        self._dof_segment = np.full(n, -1, dtype=int)  # segment carried by link
        self._segment_dof: dict[str, int] = {self.base_segment: -1}
        self.joint_dof_slices: dict[str, slice] = {}

        k = 0
        for joint in self.joints:
            if joint.parent not in self._segment_dof:
                raise ValidationError(
                    f"joint {joint.name!r}: parent segment {joint.parent!r} not yet "
                    "attached (joints must be listed parents-first)"
                )
            if joint.child in self._segment_dof:
                raise ValidationError(f"segment {joint.child!r} attached twice")
            start = k
            parent_link = self._segment_dof[joint.parent]
            for i, dof in enumerate(joint.dofs):
                self._dof_parent[k] = parent_link
                self._dof_offset[k] = joint.anchor if i == 0 else 0.0
                axis = np.asarray(dof.axis, dtype=float)
                norm = float(np.linalg.norm(axis))
                if abs(norm - 1.0) > 1e-9:
                    raise ValidationError(f"dof {dof.name!r}: axis must be unit length")
                self._dof_axis[k] = axis
                self.dof_names.append(dof.name)
                self.dof_lower[k] = dof.lower
                self.dof_upper[k] = dof.upper
                parent_link = k
                k += 1
            self._dof_segment[k - 1] = self.segment_index[joint.child]
            self._segment_dof[joint.child] = k - 1
            self.joint_dof_slices[joint.name] = slice(start, k)

        self.dof_index = {name: i for i, name in enumerate(self.dof_names)}
        if len(self.dof_index) != n:
            raise ValidationError("duplicate DoF names")

        # ancestor masks: dofs on the path base -> link i, inclusive
        self._ancestors = np.zeros((n, n), dtype=bool)
        for i in range(n):
            p = self._dof_parent[i]
            if p >= 0:
                self._ancestors[i] = self._ancestors[p]
            self._ancestors[i, i] = True

    def _validate_tree(self) -> None:
        attached = set(self._segment_dof)
        missing = [s.name for s in self.segments if s.name not in attached]
        if missing:
            raise ValidationError(f"segments not connected to the tree: {missing}")
        for seg in self.segments:
            if seg.mass < 0.0:
                raise ValidationError(f"segment {seg.name!r} has negative mass")
            inertia = np.asarray(seg.inertia, dtype=float)
            if inertia.shape != (3, 3) or not np.allclose(inertia, inertia.T, atol=1e-12):
                raise ValidationError(f"segment {seg.name!r}: inertia must be symmetric 3x3")
            if seg.mass > 0.0 and np.any(np.linalg.eigvalsh(inertia) <= 0.0):
                raise ValidationError(f"segment {seg.name!r}: inertia must be positive definite")
        self.total_mass = float(sum(s.mass for s in self.segments))
        self._masses = np.array([s.mass for s in self.segments])

    @property
    def dof_layout(self) -> dict[str, int]:
        """Actuated DoF counts grouped by body region (canonical model only)."""
        arm_joints = ("sternoclavicular", "shoulder", "elbow", "wrist")
        leg_joints = ("hip", "knee", "ankle")
        groups = {"back_neck": 0, "right_arm": 0, "left_arm": 0, "right_leg": 0, "left_leg": 0}
        for joint in self.joints:
            region = "back_neck"
            for side in ("right", "left"):
                if joint.name.startswith(f"{side}_"):
                    kind = joint.name[len(side) + 1 :]
                    if kind in arm_joints:
                        region = f"{side}_arm"
                    elif kind in leg_joints:
                        region = f"{side}_leg"
            groups[region] += len(joint.dofs)
        return groups

    def resolve_frame(self, frame: str) -> str:
        name = self.frame_aliases.get(frame, frame)
        if name != "com" and name not in self.segment_index:
            raise ValidationError(f"unknown frame {frame!r}")
        return name

    def segment(self, name: str) -> Segment:
        return self.segments[self.segment_index[name]]

    def upright_configuration(self) -> JointConfiguration:
        return JointConfiguration(
            base_position=np.array([0.0, 0.0, self.reference_base_height]),
            base_orientation=IDENTITY_QUAT.copy(),
            joint_angles=np.zeros(self.n_joint_dofs),
        )

    def check_limits(self, q: JointConfiguration) -> list[str]:
        """Joint-limit violations as human-readable flags (never raises)."""
        out = []
        for i, angle in enumerate(np.asarray(q.joint_angles)):
            if angle < self.dof_lower[i] - 1e-12 or angle > self.dof_upper[i] + 1e-12:
                out.append(
                    f"{self.dof_names[i]}: {angle:.4f} rad outside "
                    f"[{self.dof_lower[i]:.4f}, {self.dof_upper[i]:.4f}]"
                )
        return out


class KinematicState:
    """World link frames for one configuration; computed once and reused by
    pose, CoM and Jacobian queries."""

    def __init__(self, model: SkeletonModel, q: JointConfiguration):
        self.model = model
        angles = np.asarray(q.joint_angles, dtype=float)
        if angles.shape != (model.n_joint_dofs,):
            raise ValidationError(
                f"expected {model.n_joint_dofs} joint angles, got {angles.shape}"
            )
        self.base_position = np.asarray(q.base_position, dtype=float)
        self.base_rotation = quat_to_matrix(q.base_orientation)

        n = model.n_joint_dofs
        self.link_rotation = np.zeros((n, 3, 3))
        self.link_position = np.zeros((n, 3))
        self.axis_world = np.zeros((n, 3))
        for i in range(n):
            p = model._dof_parent[i]
            if p < 0:
                R_p, x_p = self.base_rotation, self.base_position
            else:
                R_p, x_p = self.link_rotation[p], self.link_position[p]
            self.link_position[i] = x_p + R_p @ model._dof_offset[i]
            axis = R_p @ model._dof_axis[i]
            self.axis_world[i] = axis
            self.link_rotation[i] = R_p @ axis_angle_matrix(model._dof_axis[i], angles[i])

    def segment_pose(self, name: str) -> Pose:
        d = self.model._segment_dof[name]
        if d < 0:
            return Pose(self.base_position.copy(), self.base_rotation.copy())
        return Pose(self.link_position[d].copy(), self.link_rotation[d].copy())

    def segment_com_world(self, name: str) -> np.ndarray:
        seg = self.model.segment(name)
        pose = self.segment_pose(name)
        return pose.position + pose.rotation @ seg.com_offset

    def com(self) -> np.ndarray:
        total = np.zeros(3)
        for seg in self.model.segments:
            total += seg.mass * self.segment_com_world(seg.name)
        return total / self.model.total_mass

    def _point_jacobian_linear(self, point: np.ndarray, link: int) -> np.ndarray:
        """3 x n_velocity Jacobian of a world point rigidly attached to a link
        (link = -1 for the base)."""
        model = self.model
        J = np.zeros((3, model.n_velocity))
        J[:, 0:3] = np.eye(3)
        r = point - self.base_position
        # omega x r = -[r]x omega
        J[:, 3:6] = np.array(
            [[0.0, r[2], -r[1]], [-r[2], 0.0, r[0]], [r[1], -r[0], 0.0]]
        )
        if link >= 0:
            mask = model._ancestors[link]
            axes = self.axis_world[mask]
            arms = point - self.link_position[mask]
            J[:, 6:][:, mask] = np.cross(axes, arms).T
        return J

    def _angular_jacobian(self, link: int) -> np.ndarray:
        model = self.model
        J = np.zeros((3, model.n_velocity))
        J[:, 3:6] = np.eye(3)
        if link >= 0:
            mask = model._ancestors[link]
            J[:, 6:][:, mask] = self.axis_world[mask].T
        return J

    def com_jacobian(self) -> np.ndarray:
        model = self.model
        J = np.zeros((3, model.n_velocity))
        for seg in model.segments:
            link = model._segment_dof[seg.name]
            J += seg.mass * self._point_jacobian_linear(self.segment_com_world(seg.name), link)
        return J / model.total_mass

    def jacobian(self, frame: str, task_kind: str = "both") -> np.ndarray:
        """World task Jacobian of a frame. Rows: linear velocity (position or
        both), then angular velocity (orientation or both)."""
        name = self.model.resolve_frame(frame)
        if name == "com":
            if task_kind != "position":
                raise ValidationError("the CoM frame only supports position tasks")
            return self.com_jacobian()
        link = self.model._segment_dof[name]
        pose = self.segment_pose(name)
        if task_kind == "position":
            return self._point_jacobian_linear(pose.position, link)
        if task_kind == "orientation":
            return self._angular_jacobian(link)
        if task_kind == "both":
            return np.vstack(
                [self._point_jacobian_linear(pose.position, link), self._angular_jacobian(link)]
            )
        raise ValidationError(f"unknown task kind {task_kind!r}")


def forward_kinematics(
    model: SkeletonModel, q: JointConfiguration
) -> tuple[dict[str, Pose], np.ndarray]:
    """World pose of every segment plus the whole-body CoM (mass-weighted
    mean of segment CoM positions)."""
    state = KinematicState(model, q)
    poses = {seg.name: state.segment_pose(seg.name) for seg in model.segments}
    return poses, state.com()


def task_jacobian(
    model: SkeletonModel, q: JointConfiguration, frame: str, task_kind: str = "both"
) -> np.ndarray:
    """Maps the 49 generalized velocities to world linear/angular velocity of
    ``frame`` (rows 3 or 6)."""
    return KinematicState(model, q).jacobian(frame, task_kind)


def integrate_configuration(
    model: SkeletonModel, q: JointConfiguration, u: np.ndarray, dt: float
) -> JointConfiguration:
    """First-order integration of a generalized velocity; base orientation via
    the quaternion exponential of the world angular velocity."""
    from .geometry import quat_multiply, rotvec_to_quat

    u = np.asarray(u, dtype=float)
    pos = q.base_position + u[0:3] * dt
    quat = quat_normalize(quat_multiply(rotvec_to_quat(u[3:6] * dt), q.base_orientation))
    angles = q.joint_angles + u[6:] * dt
    return JointConfiguration(pos, quat, angles)


# -- canonical human model -------------------------------------------------


def _segment_from_table(
    name: str,
    height: float,
    mass: float,
    table: CoefficientTable,
    axis: np.ndarray,
) -> Segment:
    try:
        c = table.segments[name]
    except KeyError:
        raise ValidationError(
            f"coefficient table {table.table_id!r} lacks segment {name!r}"
        ) from None
    length = c.length_fraction * height
    seg_mass = c.mass_fraction * mass
    com = c.com_fraction * length * axis
    gyr = np.asarray(c.gyration_fractions) * length
    inertia = np.diag(seg_mass * gyr**2)
    return Segment(name=name, length=length, mass=seg_mass, com_offset=com, inertia=inertia)


def _ball(
    name: str,
    limit_flex: float = np.pi,
    limit_other: float = np.pi,
    flexion_axis: np.ndarray = AXIS_Y,
) -> tuple[Dof, ...]:
    return (
        Dof(f"{name}_flexion", flexion_axis, -limit_flex, limit_flex),
        Dof(f"{name}_lateral", AXIS_X, -limit_other, limit_other),
        Dof(f"{name}_axial", AXIS_Z, -limit_other, limit_other),
    )


def build_model(
    profile: AnthropometricProfile, table: CoefficientTable | None = None
) -> SkeletonModel:
    """Scale the canonical 19-segment, 43-DoF model to a subject profile.

    Segment length = table fraction x height; mass = fraction x body mass;
    inertia is diagonal in the segment principal frame, from radii of gyration
    scaled by segment length.
    """
    if table is None:
        table = get_table(profile.coefficient_table_id)
    H, M = profile.height_m, profile.mass_kg

    up, down, fwd = AXIS_Z, -AXIS_Z, AXIS_X
    left, right = AXIS_Y, -AXIS_Y
    axis_of = {
        "pelvis": up, "abdomen": up, "thorax": up, "neck": up, "head": up,
        "left_clavicle": left, "right_clavicle": right,
        "left_upper_arm": down, "right_upper_arm": down,
        "left_forearm": down, "right_forearm": down,
        "left_hand": down, "right_hand": down,
        "left_thigh": down, "right_thigh": down,
        "left_shank": down, "right_shank": down,
        "left_foot": fwd, "right_foot": fwd,
    }
    segments = {
        name: _segment_from_table(name, H, M, table, axis) for name, axis in axis_of.items()
    }
    L = {name: seg.length for name, seg in segments.items()}

    def v(x: float, y: float, z: float) -> np.ndarray:
        return np.array([x, y, z])

    half_pi = np.pi / 2
    joints = [
        Joint("lumbar", "pelvis", "abdomen", v(0, 0, L["pelvis"]),
              _ball("lumbar", half_pi, half_pi)),
        Joint("thoracic", "abdomen", "thorax", v(0, 0, L["abdomen"]),
              _ball("thoracic", half_pi, half_pi)),
        Joint("lower_neck", "thorax", "neck", v(0, 0, L["thorax"]),
              (Dof("lower_neck_flexion", AXIS_Y, -half_pi, half_pi),
               Dof("lower_neck_lateral", AXIS_X, -half_pi, half_pi))),
        Joint("upper_neck", "neck", "head", v(0, 0, L["neck"]),
              _ball("upper_neck", half_pi, half_pi)),
    ]
    # hanging limbs use a forward-positive flexion axis (-Y); the trunk keeps
    # +Y so forward bending is positive, matching the reported angle series
    clav_z = CLAVICLE_ANCHOR_HEIGHT_RATIO * L["thorax"]
    for side, sgn in (("right", -1.0), ("left", 1.0)):
        joints += [
            Joint(f"{side}_sternoclavicular", "thorax", f"{side}_clavicle", v(0, 0, clav_z),
                  (Dof(f"{side}_sternoclavicular_protraction", AXIS_Z, -half_pi, half_pi),
                   Dof(f"{side}_sternoclavicular_elevation", AXIS_X, -half_pi, half_pi))),
            Joint(f"{side}_shoulder", f"{side}_clavicle", f"{side}_upper_arm",
                  v(0, sgn * L[f"{side}_clavicle"], 0),
                  _ball(f"{side}_shoulder", flexion_axis=-AXIS_Y)),
            Joint(f"{side}_elbow", f"{side}_upper_arm", f"{side}_forearm",
                  v(0, 0, -L[f"{side}_upper_arm"]),
                  (Dof(f"{side}_elbow_flexion", -AXIS_Y, -2.7, 2.7),
                   Dof(f"{side}_elbow_pronation", AXIS_Z, -half_pi, half_pi))),
            Joint(f"{side}_wrist", f"{side}_forearm", f"{side}_hand",
                  v(0, 0, -L[f"{side}_forearm"]),
                  (Dof(f"{side}_wrist_flexion", -AXIS_Y, -half_pi, half_pi),
                   Dof(f"{side}_wrist_deviation", AXIS_X, -half_pi, half_pi))),
        ]
    hip_y = HIP_HALF_WIDTH_RATIO * L["pelvis"]
    for side, sgn in (("right", -1.0), ("left", 1.0)):
        joints += [
            Joint(f"{side}_hip", "pelvis", f"{side}_thigh", v(0, sgn * hip_y, 0),
                  _ball(f"{side}_hip", flexion_axis=-AXIS_Y)),
            Joint(f"{side}_knee", f"{side}_thigh", f"{side}_shank",
                  v(0, 0, -L[f"{side}_thigh"]),
                  (Dof(f"{side}_knee_flexion", AXIS_Y, -2.7, 2.7),)),
            Joint(f"{side}_ankle", f"{side}_shank", f"{side}_foot",
                  v(0, 0, -L[f"{side}_shank"]),
                  _ball(f"{side}_ankle", half_pi, half_pi)),
        ]

    model = SkeletonModel(
        segments=segments.values(),
        joints=joints,
        base_segment="pelvis",
        frame_aliases=FRAME_ALIASES,
        reference_base_height=L["right_thigh"] + L["right_shank"],
        profile=profile,
    )
    _validate_human(model, profile)
    return model


def _validate_human(model: SkeletonModel, profile: AnthropometricProfile) -> None:
    if len(model.segments) != 19:
        raise ValidationError(f"expected 19 segments, built {len(model.segments)}")
    if len(model.joints) != 18:
        raise ValidationError(f"expected 18 joints, built {len(model.joints)}")
    if model.n_joint_dofs != 43:
        raise ValidationError(f"expected 43 actuated DoFs, built {model.n_joint_dofs}")
    if abs(model.total_mass - profile.mass_kg) > 1e-9:
        raise ValidationError(
            f"segment masses sum to {model.total_mass!r}, expected {profile.mass_kg!r}"
        )


LUMBAR_FLEXION_DOF = "lumbar_flexion"


def lumbar_flexion_index(model: SkeletonModel) -> int:
    """Canonical DoF index of the sagittal L5/S1 rotation."""
    return model.dof_index[LUMBAR_FLEXION_DOF]
