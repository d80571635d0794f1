"""Serial-chain arm model: kinematics, Newton-Euler dynamics, and IK.

The arm is an N-DOF chain of revolute joints. Each link carries a fixed
transform from its parent frame to the joint frame, the joint axis (constant
in the link frame), and the link's mass, center of mass, and rotational
inertia about the center of mass. A fixed tool transform hangs off the last
link; all task-space quantities refer to the tool tip.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .so3 import axis_angle, is_rotation, rot_rpy

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ModelFileError(Exception):
    """Robot model file failed to parse or violated the schema."""


@dataclass(frozen=True)
class Link:
    rotation: np.ndarray      # 3x3, joint frame in parent frame
    translation: np.ndarray   # 3, joint frame origin in parent frame, m
    axis: np.ndarray          # unit rotation axis in the link frame
    mass: float               # kg
    com: np.ndarray           # center of mass in the link frame, m
    inertia: np.ndarray       # 3x3 about the com, link frame, kg m^2


class RobotModel:
    """Immutable arm description plus packed arrays for the compiled kernels."""

    def __init__(self, links, tool_rotation=None, tool_translation=None, gravity=None):
        if len(links) < 1:
            raise ValueError("model needs at least one link")
        self.links = tuple(links)
        self.tool_rotation = np.eye(3) if tool_rotation is None else np.asarray(tool_rotation, float)
        self.tool_translation = np.zeros(3) if tool_translation is None else np.asarray(tool_translation, float)
        self.gravity = np.array([0.0, 0.0, -9.81]) if gravity is None else np.asarray(gravity, float)
        self._validate()

        n = len(self.links)
        self._Rp = np.stack([l.rotation for l in self.links]).astype(float)
        self._pp = np.stack([l.translation for l in self.links]).astype(float)
        self._axis = np.stack([l.axis for l in self.links]).astype(float)
        self._mass = np.array([l.mass for l in self.links], float)
        self._com = np.stack([l.com for l in self.links]).astype(float)
        self._inertia = np.stack([l.inertia for l in self.links]).astype(float)
        self.dof = n

    def _validate(self):
        for i, l in enumerate(self.links):
            if not is_rotation(l.rotation):
                raise ValueError(f"link {i}: parent rotation is not a rotation matrix")
            if abs(np.linalg.norm(l.axis) - 1.0) > 1e-9:
                raise ValueError(f"link {i}: joint axis is not unit length")
            I = np.asarray(l.inertia, float)
            if I.shape != (3, 3) or np.max(np.abs(I - I.T)) > 1e-9:
                raise ValueError(f"link {i}: inertia must be 3x3 symmetric")
            if np.min(np.linalg.eigvalsh(I)) < -1e-12:
                raise ValueError(f"link {i}: inertia must be positive semidefinite")
            if l.mass < 0:
                raise ValueError(f"link {i}: negative mass")
        if not is_rotation(self.tool_rotation):
            raise ValueError("tool rotation is not a rotation matrix")

    def check_q(self, q) -> np.ndarray:
        q = np.asarray(q, float)
        if q.shape != (self.dof,):
            raise ValueError(f"expected {self.dof} joint values, got shape {q.shape}")
        if not np.all(np.isfinite(q)):
            raise ValueError("joint vector contains non-finite values")
        return q


@dataclass
class JointState:
    q: np.ndarray
    qd: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, float)
        self.qd = np.asarray(self.qd, float)
        if self.q.shape != self.qd.shape:
            raise ValueError("q and qd must have equal length")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.qd))):
            raise ValueError("joint state contains non-finite values")

    def copy(self) -> "JointState":
        return JointState(self.q.copy(), self.qd.copy())


def forward_kinematics(model: RobotModel, q) -> tuple[np.ndarray, np.ndarray]:
    """Tool pose (position, rotation) in the base frame."""
    q = model.check_q(q)
    x, R = _kernels.tool_pose_kernel(
        model._Rp, model._pp, model._axis, q, model.tool_rotation, model.tool_translation
    )
    return x, R


def link_frames(model: RobotModel, q) -> tuple[np.ndarray, np.ndarray]:
    """Base-frame rotations (N,3,3) and origins (N,3) of every link."""
    q = model.check_q(q)
    return _kernels.link_poses(model._Rp, model._pp, model._axis, q)


def jacobian(model: RobotModel, q) -> np.ndarray:
    """6xN geometric Jacobian at the tool tip (linear rows first)."""
    q = model.check_q(q)
    J, _, _ = _kernels.jacobian_kernel(
        model._Rp, model._pp, model._axis, q, model.tool_rotation, model.tool_translation
    )
    return J


def tool_state(model: RobotModel, q) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(J, x, R) in one kernel call; cheaper when all three are needed."""
    q = model.check_q(q)
    return _kernels.jacobian_kernel(
        model._Rp, model._pp, model._axis, q, model.tool_rotation, model.tool_translation
    )


def inverse_dynamics(model: RobotModel, q, qd, qdd) -> np.ndarray:
    """Joint torque realizing qdd at (q, qd) under the model's gravity."""
    q = model.check_q(q)
    qd = model.check_q(qd)
    qdd = model.check_q(qdd)
    return _kernels.rnea_kernel(
        model._Rp, model._pp, model._axis, model._mass, model._com, model._inertia,
        q, qd, qdd, model.gravity,
    )


def gravity_torque(model: RobotModel, q) -> np.ndarray:
    """Generalized gravity load: inverse dynamics with zero motion."""
    q = model.check_q(q)
    z = np.zeros(model.dof)
    return _kernels.rnea_kernel(
        model._Rp, model._pp, model._axis, model._mass, model._com, model._inertia,
        q, z, z, model.gravity,
    )


def mass_matrix(model: RobotModel, q) -> np.ndarray:
    q = model.check_q(q)
    M, _ = _kernels.mass_and_bias(
        model._Rp, model._pp, model._axis, model._mass, model._com, model._inertia,
        q, np.zeros(model.dof), model.gravity,
    )
    return M


def forward_accel(model: RobotModel, q, qd, tau, joint_damping) -> np.ndarray:
    """qdd from M(q) qdd = tau - C(q,qd)qd - g(q) - D qd."""
    damping = np.broadcast_to(np.asarray(joint_damping, float), (model.dof,)).copy()
    return _kernels.accel_kernel(
        model._Rp, model._pp, model._axis, model._mass, model._com, model._inertia,
        np.asarray(q, float), np.asarray(qd, float), np.asarray(tau, float),
        damping, model.gravity,
    )


class IKError(Exception):
    """Damped-least-squares IK failed to converge."""


def solve_ik(model, target_pos, target_rot, q0, pos_tol=1e-5, rot_tol=1e-4,
             max_iters=300, damping=0.05) -> np.ndarray:
    """Iterative damped-least-squares IK for a full 6-DOF tool pose."""
    q = model.check_q(q0).copy()
    lam2 = damping * damping
    I = np.eye(model.dof)
    for _ in range(max_iters):
        J, x, R = tool_state(model, q)
        e_pos = target_pos - x
        e_rot = axis_angle(target_rot @ R.T)
        if np.linalg.norm(e_pos) < pos_tol and np.linalg.norm(e_rot) < rot_tol:
            return q
        err = np.concatenate([e_pos, e_rot])
        dq = np.linalg.solve(J.T @ J + lam2 * I, J.T @ err)
        step = np.linalg.norm(dq)
        if step > 0.5:
            dq *= 0.5 / step
        q = q + dq
    J, x, R = tool_state(model, q)
    raise IKError(
        "IK did not converge: position residual "
        f"{np.linalg.norm(target_pos - x):.3e} m, orientation residual "
        f"{np.linalg.norm(axis_angle(target_rot @ R.T)):.3e} rad, q={np.array2string(q, precision=3)}"
    )


def _field(table, key, where):
    if key not in table:
        raise ModelFileError(f"{where}: missing field '{key}'")
    return table[key]


def _vec3(value, where):
    v = np.asarray(value, float)
    if v.shape != (3,):
        raise ModelFileError(f"{where}: expected a 3-vector, got {value!r}")
    return v


def _rotation_of(table, where):
    if "rotation" in table:
        R = np.asarray(table["rotation"], float)
        if R.shape != (3, 3):
            raise ModelFileError(f"{where}: 'rotation' must be a 3x3 matrix")
        return R
    rpy = table.get("rpy", [0.0, 0.0, 0.0])
    return rot_rpy(*_vec3(rpy, f"{where}.rpy"))


def load_robot_model(path) -> RobotModel:
    """Load a robot model from its TOML description.

    Schema: optional top-level `gravity`; a `[tool]` table with
    `translation` and `rpy`/`rotation`; and one `[[links]]` table per joint
    with `translation`, `rpy`/`rotation`, `axis`, `mass`, `com`, and either
    `inertia` (3x3 rows) or `inertia_diag`.
    """
    path = Path(path)
    try:
        with open(path, "rb") as f:
            doc = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ModelFileError(f"{path}: {e}") from e

    raw_links = doc.get("links")
    if not raw_links:
        raise ModelFileError(f"{path}: no [[links]] tables found")

    links = []
    for i, t in enumerate(raw_links):
        where = f"{path} links[{i}]"
        if "inertia" in t:
            I = np.asarray(t["inertia"], float)
            if I.shape != (3, 3):
                raise ModelFileError(f"{where}: 'inertia' must be 3x3")
        else:
            I = np.diag(_vec3(_field(t, "inertia_diag", where), f"{where}.inertia_diag"))
        links.append(Link(
            rotation=_rotation_of(t, where),
            translation=_vec3(_field(t, "translation", where), f"{where}.translation"),
            axis=_vec3(_field(t, "axis", where), f"{where}.axis"),
            mass=float(_field(t, "mass", where)),
            com=_vec3(_field(t, "com", where), f"{where}.com"),
            inertia=I,
        ))

    tool = doc.get("tool", {})
    try:
        return RobotModel(
            links,
            tool_rotation=_rotation_of(tool, f"{path} tool"),
            tool_translation=_vec3(tool.get("translation", [0, 0, 0]), f"{path} tool.translation"),
            gravity=_vec3(doc.get("gravity", [0, 0, -9.81]), f"{path} gravity"),
        )
    except ValueError as e:
        raise ModelFileError(f"{path}: {e}") from e
