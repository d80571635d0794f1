"""Scripted operator models and the closed-loop trial runner.

Four teleoperation configurations replace the human in headless runs:

  uni     gamepad-style Cartesian force pursuit of a lookahead point
  bi      joint-space coupling to a local arm replaying an ideal trajectory
  uni_vf  uni plus the virtual-fixture controller
  bi_vf   bi plus the virtual-fixture controller

The operator imperfections are a reaction delay and band-limited Gaussian
tremor built from a seeded sum of sinusoids, which makes every trial fully
deterministic per seed and gives the tremor an analytic derivative.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .control import ControlState, GainSet, bilateral_torque, vf_step
from .metrics import TrialRecord
from .paths import DesiredPath, frame_at, nearest_index, orientation_at, project_arclength
from .robot import IKError, JointState, RobotModel, solve_ik, tool_state
from .sim import SimConfig, SimulationFault, step
from .so3 import axis_angle
from .surfaces import Turntable

MODES = ("uni", "bi", "uni_vf", "bi_vf")


@dataclass(frozen=True)
class TeleopConfig:
    mode: str

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown teleop mode {self.mode!r}; expected one of {MODES}")

    @property
    def vf_enabled(self) -> bool:
        return self.mode.endswith("_vf")

    @property
    def bilateral(self) -> bool:
        return self.mode.startswith("bi")


class BandLimitedNoise:
    """Seeded Gaussian noise confined to a frequency band.

    A sum of sinusoid pairs with Gaussian amplitudes on a jittered grid of
    band frequencies: the marginal is exactly Gaussian with the requested
    sigma, the derivative is analytic, and the sequence is a pure function
    of the generator state at construction.
    """

    def __init__(self, sigma, band, rng: np.random.Generator,
                 dims: int = 1, components: int = 24):
        f_lo, f_hi = band
        sigma = np.broadcast_to(np.asarray(sigma, float), (dims,))
        if np.any(sigma < 0) or f_lo <= 0 or f_hi <= f_lo:
            raise ValueError("need sigma >= 0 and 0 < f_lo < f_hi")
        edges = np.linspace(f_lo, f_hi, components + 1)
        jitter = rng.uniform(0.0, 1.0, (dims, components))
        self.omega = 2.0 * np.pi * (edges[:-1] + jitter * np.diff(edges))
        scale = sigma[:, None] / np.sqrt(components)
        unit = rng.normal(0.0, 1.0, (2, dims, components))
        self.a = scale * unit[0]
        self.b = scale * unit[1]

    def value(self, t: float) -> np.ndarray:
        wt = self.omega * t
        return (self.a * np.cos(wt) + self.b * np.sin(wt)).sum(axis=1)

    def derivative(self, t: float) -> np.ndarray:
        wt = self.omega * t
        return (self.omega * (self.b * np.cos(wt) - self.a * np.sin(wt))).sum(axis=1)


@dataclass
class OperatorModel:
    """Parameters of the scripted human; seeds are supplied per trial."""
    lookahead: float = 0.03          # m along the path
    gain: float = 120.0              # N/m pursuit stiffness (uni)
    damping: float = 30.0            # N s/m self-damping on perceived velocity (uni)
    press: float = 3.0               # N bias into the surface (uni)
    press_depth: float = 0.0025      # m the bilateral intent sinks into the surface
    tremor_sigma: float = 0.0        # N, task-space tremor at rest (uni)
    tremor_effort_gain: float = 2.0  # tremor growth per N of corrective effort (uni)
    tremor_effort_cap: float = 1.5   # N, effort beyond this adds no tremor
    joint_tremor_sigma: float = 0.0  # rad, joint-space tremor scale (bi)
    # distal joints tremor more than proximal ones; scales joint_tremor_sigma
    joint_tremor_weights: tuple = (0.1, 0.06, 0.25, 0.2, 0.8, 1.0, 0.8)
    tremor_band: tuple = (0.3, 2.5)        # Hz, task-space tremor
    joint_tremor_band: tuple = (0.2, 1.2)  # Hz, joint-space tremor
    delay: float = 0.25              # s reaction delay
    cmd_max: float = 20.0            # N command saturation
    cmd_quantum: float = 0.0         # N; humans set a springy stick in coarse steps
    speed: float = 0.02              # m/s intended traversal speed
    update_period: float = 0.4       # s between discrete visual corrections (uni)
    wrist_gain: float = 0.2          # N m s/rad wrist rate-command tracking
    align_gain: float = 3.0          # 1/s orientation pursuit rate (uni)

    def __post_init__(self):
        if self.tremor_sigma < 0 or self.delay < 0:
            raise ValueError("tremor sigma and delay must be >= 0")


@dataclass
class UniCommand:
    """One gamepad command split into its behavioral components.

    `feed` (smooth pace-keeping pull along the path, plus the steady
    surface press) is regenerated continuously; `correction` (the
    cross-path error correction) is a ballistic, intermittent act the
    trial loop holds for `update_period`, and it sets the tremor scale
    (human motor noise grows with corrective effort, saturating).
    """
    feed: np.ndarray
    correction: np.ndarray
    rate: np.ndarray
    tremor_scale: float


def uni_command(op: OperatorModel, pose, path: DesiredPath, t: float) -> UniCommand:
    """Gamepad-style command toward a lookahead point on the path.

    `pose` is the (position, rotation) the operator perceives, already
    delayed by the caller. The pursuit pulls toward a segment-interpolated
    lookahead point, never ahead of the operator's intended pace, and the
    total commanded force is clamped to `cmd_max` by the caller.
    """
    x, R = pose
    s = project_arclength(path, x)
    # lookahead ahead of the tool, but never ahead of the intended pace
    s_target = min(s + op.lookahead, op.speed * t + op.lookahead)
    target = path.point_at_arclength(s_target)
    idx = nearest_index(path, x)
    frame = frame_at(path, idx)
    pursuit = op.gain * (target - x)
    along = float(pursuit @ frame.t_hat) * frame.t_hat
    correction = pursuit - along
    feed = along - op.press * frame.n_hat
    effort = min(float(np.linalg.norm(correction)), op.tremor_effort_cap)
    try:
        err = axis_angle(orientation_at(path, idx) @ R.T)
    except ValueError:
        err = np.zeros(3)
    return UniCommand(feed=feed, correction=correction, rate=op.align_gain * err,
                      tremor_scale=1.0 + op.tremor_effort_gain * effort)


@dataclass
class IdealTrajectory:
    """Joint-space reference a perfect operator would play back."""
    t: np.ndarray   # uniform grid, s
    q: np.ndarray   # (T, dof)
    qd: np.ndarray  # (T, dof), derivative of the linear interpolant

    def sample(self, tt: float):
        grid = self.t
        if tt <= grid[0]:
            return self.q[0], np.zeros_like(self.q[0])
        if tt >= grid[-1]:
            return self.q[-1], np.zeros_like(self.q[-1])
        j = int(np.searchsorted(grid, tt, side="right") - 1)
        w = (tt - grid[j]) / (grid[j + 1] - grid[j])
        return self.q[j] + w * (self.q[j + 1] - self.q[j]), self.qd[j]


class ScenarioError(Exception):
    pass


def build_ideal_trajectory(model: RobotModel, path: DesiredPath, op: OperatorModel,
                           q_start, grid_dt: float = 0.01,
                           hold: float = 5.0) -> IdealTrajectory:
    """Inverse-kinematics playback of the path at the operator's speed.

    The intent presses `press_depth` below the surface (the operator leans
    on the contact); each solve is seeded from the previous one. An
    unreachable sample rejects the scenario.
    """
    cum = path.cumulative_arclength()
    s_end = float(cum[-1])
    duration = s_end / max(op.speed, 1e-6) + hold
    tgrid = np.arange(0.0, duration + grid_dt / 2, grid_dt)
    qs = np.empty((tgrid.shape[0], model.dof))
    q_seed = np.asarray(q_start, float).copy()
    for j, tj in enumerate(tgrid):
        s = min(op.speed * tj, s_end)
        idx = int(np.searchsorted(cum, s, side="right") - 1)
        idx = min(max(idx, 0), len(path) - 1)
        frame = frame_at(path, idx)
        pos = path.point_at_arclength(s) - op.press_depth * frame.n_hat
        rot = orientation_at(path, idx)
        try:
            q_seed = solve_ik(model, pos, rot, q_seed)
        except IKError as e:
            raise ScenarioError(
                f"ideal trajectory unreachable at s={s:.4f} m (t={tj:.2f} s): {e}") from e
        qs[j] = q_seed
    qd = np.gradient(qs, grid_dt, axis=0)
    qd[-1] = 0.0
    return IdealTrajectory(t=tgrid, q=qs, qd=qd)


def bi_local_state(op: OperatorModel, ideal: IdealTrajectory, t: float,
                   noise: BandLimitedNoise | None = None):
    """Local-arm joint state: delayed ideal playback plus joint tremor."""
    q, qd = ideal.sample(t - op.delay)
    if noise is not None:
        q = q + noise.value(t)
        qd = qd + noise.derivative(t)
    return q, qd


def _wrap_pi(a: float) -> float:
    return (a + np.pi) % (2.0 * np.pi) - np.pi


def run_trial(config, scenario, gains: GainSet, op: OperatorModel,
              sim_cfg: SimConfig, seed: int) -> TrialRecord:
    """Run one closed-loop trial and return its 100 Hz record.

    The operator intent updates at 100 Hz and is held between updates; the
    controller and plant run at the simulation rate. The trial ends when
    the tool reaches the path end within the scenario tolerance (or the
    turntable sweeps its target angle), or at timeout; a simulation fault
    marks the trial failed at the faulting sample.
    """
    mode = config.mode if isinstance(config, TeleopConfig) else str(config)
    config = TeleopConfig(mode)
    model = scenario.model
    path = scenario.path
    surface = scenario.fresh_surface()
    params = scenario.contact
    state = scenario.start_state()
    ctl = ControlState(vf_enabled=config.vf_enabled)

    rng = np.random.default_rng(seed)
    if config.bilateral:
        weights = np.asarray(op.joint_tremor_weights, float)
        if weights.shape[0] != model.dof:
            weights = np.ones(model.dof)
        noise = BandLimitedNoise(op.joint_tremor_sigma * weights, op.joint_tremor_band,
                                 rng, dims=model.dof)
        ideal = scenario.ideal_trajectory(op)
    else:
        noise = BandLimitedNoise(op.tremor_sigma, op.tremor_band, rng, dims=3)

    dt = sim_cfg.dt
    ctrl_every = max(1, int(round(0.01 / dt)))
    update_every = max(ctrl_every, int(round(op.update_period / dt)))
    delay_slots = int(round(op.delay / (ctrl_every * dt)))
    pose_buffer: deque = deque(maxlen=delay_slots + 1)

    n_max = int(round(scenario.timeout / dt))
    end_point = path.points[-1]
    target_angle = getattr(scenario, "turntable_target", None)
    swept = 0.0
    prev_angle = surface.angle if isinstance(surface, Turntable) else 0.0

    ts, qs, xs, fns, contacts, idxs = [], [], [], [], [], []
    status = "timeout"
    force_cmd = np.zeros(3)
    feed_cmd = np.zeros(3)
    corr_cmd = np.zeros(3)
    stick_level = np.zeros(3)
    rate_cmd = np.zeros(3)
    tremor_scale = 1.0
    q_l = state.q.copy()
    qd_l = np.zeros(model.dof)
    t_final = 0.0

    for i in range(n_max):
        t = i * dt
        tool = tool_state(model, state.q)
        J, x, R = tool
        tick = i % ctrl_every == 0

        if tick:
            if config.bilateral:
                q_l, qd_l = bi_local_state(op, ideal, t, noise)
            else:
                pose_buffer.append((x, R))
                cmd = uni_command(op, pose_buffer[0], path, t)
                feed_cmd = cmd.feed
                if i % update_every == 0:  # ballistic visual correction
                    corr_cmd = cmd.correction
                    rate_cmd = cmd.rate
                    tremor_scale = cmd.tremor_scale
                raw_cmd = feed_cmd + corr_cmd + tremor_scale * noise.value(t)
                if op.cmd_quantum > 0.0:
                    # stick levels move only when the intent drifts well past
                    # the held level (human re-planning hysteresis)
                    moved = np.abs(raw_cmd - stick_level) >= 0.6 * op.cmd_quantum
                    stick_level[moved] = np.round(
                        raw_cmd[moved] / op.cmd_quantum) * op.cmd_quantum
                    force_cmd = stick_level.copy()
                else:
                    force_cmd = raw_cmd
                fmag = float(np.linalg.norm(force_cmd))
                if fmag > op.cmd_max:
                    force_cmd = force_cmd * (op.cmd_max / fmag)

        # map the held intent to joint torque with the current state
        if config.bilateral:
            tau_l = -bilateral_torque(state.q, state.qd, q_l, qd_l, gains.bilateral)
        else:
            xd_now = J[:3] @ state.qd
            omega = J[3:] @ state.qd
            tau_l = J[:3].T @ (force_cmd - op.damping * xd_now) \
                + J[3:].T @ (op.wrist_gain * (rate_cmd - omega))

        tau = vf_step(model, state, path, gains, ctl, tau_l, dt, tool=tool)
        q_pre = state.q
        try:
            state, cs = step(model, state, tau, surface, params, sim_cfg, tool=tool)
        except SimulationFault:
            status = f"fault@{len(ts)}"
            t_final = t
            break
        t_final = t + dt

        if tick:
            ts.append(t)
            qs.append(q_pre)
            xs.append(cs.x)
            fns.append(cs.f_normal)
            contacts.append(cs.in_contact)
            idxs.append(ctl.prev_index if config.vf_enabled else nearest_index(path, cs.x))

            if target_angle is not None and isinstance(surface, Turntable):
                swept += _wrap_pi(surface.angle - prev_angle)
                prev_angle = surface.angle
                if (target_angle > 0 and swept >= target_angle) or \
                   (target_angle < 0 and swept <= target_angle):
                    status = "completed"
                    break
            elif target_angle is None and \
                    float(np.linalg.norm(cs.x - end_point)) < scenario.end_tolerance:
                status = "completed"
                break

    return TrialRecord(
        t=np.array(ts), q=np.array(qs), x=np.array(xs), f_n=np.array(fns),
        in_contact=np.array(contacts, bool), index=np.array(idxs, int),
        mode=mode, scenario=scenario.name, seed=seed, status=status,
        duration=t_final,
    )
