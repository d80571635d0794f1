"""The virtual-fixture controller stack and bilateral coupling.

Four task-space regulators act in the path frame {normal n, side s,
tangent t} at the constrained path point:

  side (path)   F_s = Kpp (d . s) + Kdp (xd . s)      applied as -F_s s
  normal        F_n = Kpn (d . n) + Kdn (xd . n) + F0 applied as -F_n n, F_n >= 0
  tangential    applied force (Kpt (v_d - xd . t) - Kdt (xdd . t)) t
  orientation   tau_o = Kpo e - Kdo w, e = log(o_d o^T), gains in the tool frame

Applied signs are fixed so every regulator is restoring: the side spring
pulls the tool onto the path, the normal term presses into the surface and
never pulls away (clamped at zero), and the tangential term drives the tool
forward when it is below the desired speed. Joint torques come from the
Jacobian transpose, plus gravity compensation and the coupling torque from
the local side.
"""

from __future__ import annotations

import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .paths import (DegenerateFrameError, DesiredPath, PathFrame,
                    desired_orientation, frame_at, nearest_index, orientation_at)
from .robot import JointState, RobotModel, gravity_torque, tool_state
from .so3 import axis_angle

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass
class PathGains:
    stiffness: float = 1000.0   # N/m
    damping: float = 10.0       # N s/m


@dataclass
class NormalGains:
    stiffness: float = 10.0     # N/m
    damping: float = 0.1        # N s/m
    nominal_force: float = 4.0  # N, pressed into the surface


@dataclass
class TangentialGains:
    stiffness: float = 15.0       # N s/m (velocity error gain)
    damping: float = 0.01         # N s^2/m (acceleration gain)
    desired_velocity: float = 0.02  # m/s along the path


@dataclass
class OrientationGains:
    stiffness: np.ndarray = field(default_factory=lambda: np.diag([7.0, 7.0, 0.0]))
    damping: np.ndarray = field(default_factory=lambda: 0.01 * np.eye(3))

    def __post_init__(self):
        self.stiffness = np.asarray(self.stiffness, float)
        self.damping = np.asarray(self.damping, float)


@dataclass
class BilateralGains:
    stiffness: np.ndarray = field(
        default_factory=lambda: np.array([900.0, 2500.0, 600.0, 500.0, 50.0, 50.0, 8.0]))
    damping: np.ndarray = field(
        default_factory=lambda: np.array([10.0, 20.0, 5.0, 2.0, 0.5, 0.5, 0.05]))

    def __post_init__(self):
        self.stiffness = np.asarray(self.stiffness, float)
        self.damping = np.asarray(self.damping, float)


@dataclass
class GainSet:
    path: PathGains = field(default_factory=PathGains)
    normal: NormalGains = field(default_factory=NormalGains)
    tangential: TangentialGains = field(default_factory=TangentialGains)
    orientation: OrientationGains = field(default_factory=OrientationGains)
    bilateral: BilateralGains = field(default_factory=BilateralGains)

    def __post_init__(self):
        scalars = [self.path.stiffness, self.path.damping,
                   self.normal.stiffness, self.normal.damping, self.normal.nominal_force,
                   self.tangential.stiffness, self.tangential.damping,
                   self.tangential.desired_velocity]
        if any(v < 0 for v in scalars):
            raise ValueError("gains, nominal force, and desired velocity must be >= 0")
        for arr in (self.orientation.stiffness, self.orientation.damping,
                    self.bilateral.stiffness, self.bilateral.damping):
            if np.any(np.asarray(arr) < 0):
                raise ValueError("gain matrices must be elementwise >= 0")


def load_gains(path) -> GainSet:
    """Load a GainSet from TOML; missing tables keep their defaults."""
    with open(Path(path), "rb") as f:
        doc = tomllib.load(f)
    g = GainSet()
    if "path" in doc:
        g.path = PathGains(doc["path"]["stiffness"], doc["path"]["damping"])
    if "normal" in doc:
        t = doc["normal"]
        g.normal = NormalGains(t["stiffness"], t["damping"], t.get("nominal_force", 4.0))
    if "tangential" in doc:
        t = doc["tangential"]
        g.tangential = TangentialGains(t["stiffness"], t["damping"],
                                       t.get("desired_velocity", 0.02))
    if "orientation" in doc:
        t = doc["orientation"]
        g.orientation = OrientationGains(np.diag(t["stiffness_diag"]),
                                         np.diag(t["damping_diag"]))
    if "bilateral" in doc:
        t = doc["bilateral"]
        g.bilateral = BilateralGains(np.asarray(t["stiffness_diag"], float),
                                     np.asarray(t["damping_diag"], float))
    return GainSet(g.path, g.normal, g.tangential, g.orientation, g.bilateral)


@dataclass
class ControlState:
    """Per-robot controller memory: filters, last frame, progress index."""
    vf_enabled: bool = True
    filter_cutoff: float = 20.0   # Hz, low-pass on the acceleration estimate
    monotone_index: bool = False  # restrict the constraint search to move forward
    prev_xd: np.ndarray | None = None
    xdd_filtered: np.ndarray = field(default_factory=lambda: np.zeros(3))
    samples_seen: int = 0
    prev_index: int = 0
    last_frame: PathFrame | None = None
    frame_warnings: int = 0

    def __post_init__(self):
        if self.filter_cutoff <= 0:
            raise ValueError("filter cutoff must be positive")

    def reset(self):
        self.prev_xd = None
        self.xdd_filtered = np.zeros(3)
        self.samples_seen = 0
        self.prev_index = 0
        self.last_frame = None
        self.frame_warnings = 0

    def update_accel(self, xd: np.ndarray, dt: float) -> np.ndarray:
        """Backward-difference acceleration, first-order low-passed.

        Returns zero until two velocity samples have been seen.
        """
        if self.prev_xd is not None:
            raw = (xd - self.prev_xd) / dt
            alpha = dt / (dt + 1.0 / (2.0 * np.pi * self.filter_cutoff))
            self.xdd_filtered = self.xdd_filtered + alpha * (raw - self.xdd_filtered)
        self.prev_xd = xd.copy()
        self.samples_seen += 1
        return self.xdd_filtered


def path_force(d, xd, frame: PathFrame, gains: PathGains):
    """Side-direction spring-damper: returns (F_s, F_s * s_hat).

    F_s = Kpp (d . s) + Kdp (xd . s). The stabilizing applied force is the
    negative of the returned vector (the torque contribution is
    J^T (-F_s s_hat)); vf_step applies that sign.
    """
    fs = gains.stiffness * float(np.dot(d, frame.s_hat)) + \
        gains.damping * float(np.dot(xd, frame.s_hat))
    return fs, fs * frame.s_hat


def normal_force(d, xd, frame: PathFrame, gains: NormalGains) -> np.ndarray:
    """Surface-pressing force, applied along -n_hat and never adhesive.

    Magnitude Kpn (d . n) + Kdn (xd . n) + F0, clamped below at zero so the
    controller cannot pull the tool off the surface.
    """
    fn = gains.stiffness * float(np.dot(d, frame.n_hat)) + \
        gains.damping * float(np.dot(xd, frame.n_hat)) + gains.nominal_force
    fn = max(fn, 0.0)
    return -fn * frame.n_hat


def tangential_force(xd, xdd_est, frame: PathFrame, gains: TangentialGains) -> np.ndarray:
    """Feed force along the tangent driving the tool at the desired speed.

    Applied force (Kpt (v_d - xd . t) - Kdt (xdd . t)) t_hat, positive along
    +t_hat when the tool is below the desired velocity (constant v_d, so the
    desired-acceleration term is zero).
    """
    ft = gains.stiffness * (gains.desired_velocity - float(np.dot(xd, frame.t_hat))) \
        - gains.damping * float(np.dot(xdd_est, frame.t_hat))
    return ft * frame.t_hat


def orientation_torque(o: np.ndarray, o_d: np.ndarray, omega, gains: OrientationGains) -> np.ndarray:
    """Task-space torque aligning tool orientation o with o_d.

    The error is the axis-angle of o_d o^T; the stiffness acts in the
    desired tool frame so a zero z-entry leaves tool spin free. Raises for
    errors within 1e-6 rad of pi (ambiguous axis).
    """
    try:
        err = axis_angle(o_d @ o.T)
    except ValueError as e:
        raise DegenerateFrameError(str(e)) from e
    torque = o_d @ (gains.stiffness @ (o_d.T @ err)) \
        - o_d @ (gains.damping @ (o_d.T @ np.asarray(omega, float)))
    return torque


def bilateral_torque(q_r, qd_r, q_l, qd_l, gains: BilateralGains) -> np.ndarray:
    """Joint-space coupling torque Kpl (q_r - q_l) + Kdl (qd_r - qd_l).

    Diagonal gains, joint-to-joint mapping. Apply the negation to the
    remote arm (pulling it toward the local pose); the raw value is the
    force-feedback reflection on the local side.
    """
    q_r = np.asarray(q_r, float)
    q_l = np.asarray(q_l, float)
    qd_r = np.asarray(qd_r, float)
    qd_l = np.asarray(qd_l, float)
    if not (q_r.shape == q_l.shape == qd_r.shape == qd_l.shape):
        raise ValueError("joint vectors must have equal length on both sides")
    n = q_r.shape[0]
    kp = _fit_diag(gains.stiffness, n)
    kd = _fit_diag(gains.damping, n)
    return kp * (q_r - q_l) + kd * (qd_r - qd_l)


def _fit_diag(diag: np.ndarray, n: int) -> np.ndarray:
    """Pad (with zeros) or truncate a per-joint gain vector to n joints."""
    diag = np.asarray(diag, float)
    if diag.shape[0] == n:
        return diag
    out = np.zeros(n)
    out[: min(n, diag.shape[0])] = diag[: min(n, diag.shape[0])]
    return out


def vf_step(model: RobotModel, state: JointState, path: DesiredPath, gains: GainSet,
            ctl: ControlState, tau_l, dt: float = 0.001, tool=None) -> np.ndarray:
    """One control evaluation: the commanded joint torque.

    Composes gravity compensation, the four path-frame regulators mapped
    through the Jacobian transpose, and the local-side torque tau_l. With
    the virtual fixture disabled only gravity compensation and tau_l
    remain. `tool` optionally carries a precomputed (J, x, R) triple so the
    caller can share kinematics with the simulation step.
    """
    tau_l = np.asarray(tau_l, float)
    if tau_l.shape != (model.dof,):
        raise ValueError(f"tau_l has shape {tau_l.shape}, expected ({model.dof},)")
    J, x, R = tool if tool is not None else tool_state(model, state.q)
    xd = J[:3] @ state.qd
    omega = J[3:] @ state.qd
    xdd = ctl.update_accel(xd, dt)
    tau_g = gravity_torque(model, state.q)

    if not ctl.vf_enabled:
        return tau_g + tau_l

    idx = nearest_index(path, x, min_index=ctl.prev_index if ctl.monotone_index else 0)
    d = x - path.points[idx]
    ctl.prev_index = idx
    try:
        frame = frame_at(path, idx)
        ctl.last_frame = frame
        o_d = orientation_at(path, idx)
    except DegenerateFrameError:
        if ctl.last_frame is None:
            raise
        frame = ctl.last_frame
        o_d = desired_orientation(frame)
        ctl.frame_warnings += 1
        warnings.warn("degenerate path frame; holding the last valid frame")

    _, f_path_raw = path_force(d, xd, frame, gains.path)
    f_task = -f_path_raw
    f_task = f_task + normal_force(d, xd, frame, gains.normal)
    f_task = f_task + tangential_force(xd, xdd, frame, gains.tangential)
    tau_o = orientation_torque(R, o_d, omega, gains.orientation)

    return tau_g + J[:3].T @ f_task + J[3:].T @ tau_o + tau_l
