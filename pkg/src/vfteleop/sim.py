"""Fixed-timestep simulation of the torque-controlled arm in contact.

One `step` advances the chain by dt under a commanded joint torque, the
penalty contact force at the tool tip, and viscous joint damping, using
semi-implicit Euler (velocity first, then position). Identical inputs give
bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .robot import JointState, RobotModel, forward_accel, tool_state
from .surfaces import ContactParams, Turntable, contact_force, turntable_step


class SimulationFault(Exception):
    """The integrator produced a non-finite state."""


@dataclass
class SimConfig:
    dt: float = 0.001
    integrator: str = "semi_implicit_euler"
    joint_damping: float = 0.1  # N m s, applied per joint

    def __post_init__(self):
        if not (0.0 < self.dt <= 0.01):
            raise ValueError("dt must be in (0, 0.01] s")
        if self.integrator != "semi_implicit_euler":
            raise ValueError(f"unsupported integrator: {self.integrator}")


@dataclass
class ContactSample:
    x: np.ndarray          # tool position before the step, m
    f_normal: float        # measured normal force magnitude, N
    in_contact: bool


def step(model: RobotModel, state: JointState, tau, surface, params: ContactParams,
         cfg: SimConfig, tool=None) -> tuple[JointState, ContactSample]:
    """Advance one timestep; returns the new state and the contact sample.

    The contact force is evaluated at the pre-step tool state and enters the
    joint-space dynamics through the linear Jacobian transpose. A turntable
    surface additionally receives the reaction force and spins accordingly.
    `tool` optionally carries the (J, x, R) triple already computed for this
    state so the control and simulation layers share one kinematics pass.
    """
    tau = np.asarray(tau, float)
    if tau.shape != (model.dof,):
        raise ValueError(f"torque vector has shape {tau.shape}, expected ({model.dof},)")

    J, x, _ = tool if tool is not None else tool_state(model, state.q)
    xd = J[:3] @ state.qd

    if surface is not None:
        f, in_contact, n = contact_force(surface, x, xd, params)
        f_normal = float(f @ n)
        tau_ext = J[:3].T @ f
    else:
        f = np.zeros(3)
        in_contact = False
        f_normal = 0.0
        tau_ext = 0.0

    qdd = forward_accel(model, state.q, state.qd, tau + tau_ext, cfg.joint_damping)
    qd_new = state.qd + qdd * cfg.dt
    q_new = state.q + qd_new * cfg.dt

    if not (np.all(np.isfinite(q_new)) and np.all(np.isfinite(qd_new))):
        raise SimulationFault(
            f"non-finite state after step: max|q|={np.max(np.abs(q_new)):.3e}, "
            f"max|qd|={np.max(np.abs(qd_new)):.3e}, max|tau|={np.max(np.abs(tau)):.3e}"
        )

    if in_contact and isinstance(surface, Turntable):
        turntable_step(surface, -f, x, cfg.dt)

    return JointState(q_new, qd_new), ContactSample(x=x, f_normal=f_normal, in_contact=in_contact)
