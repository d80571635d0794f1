"""Scenario files: the task definitions behind headless experiment runs.

A scenario TOML names the robot model, the work surface, how the desired
path is obtained (geometric primitives, a path file, or synthetic clicks
through the perception pipeline), the start pose, the end condition, the
operator parameters, and the run matrix (modes, trial count, seeds).
Derived artifacts (the path, the start joint pose, bilateral ideal
trajectories) are computed lazily and cached on the scenario.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .operators import OperatorModel, ScenarioError, build_ideal_trajectory
from .paths import DesiredPath, frame_at, load_path, orientation_at, resample_polyline
from .perception import CameraModel, pixel_path_to_3d, synth_cloud
from .robot import IKError, JointState, RobotModel, load_robot_model, solve_ik
from .so3 import rot_rpy, rot_x
from .surfaces import ContactParams, Plane, Sphere, Turntable

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULT_IK_SEED = [0.0, 0.6, 0.0, 1.2, 0.0, 1.2, 0.0]


def data_file(name: str) -> Path:
    """Path of a bundled data file (models, gains, scenarios)."""
    return Path(resources.files("vfteleop").joinpath("data", name))


def _surface_normal_at(surface, p: np.ndarray) -> np.ndarray:
    if isinstance(surface, Plane):
        return surface.normal
    if isinstance(surface, Sphere):
        r = p - surface.center
        return r / np.linalg.norm(r)
    if isinstance(surface, Turntable):
        return surface.axis
    raise ScenarioError(f"unknown surface {type(surface).__name__}")


def _build_surface(table: dict) -> object:
    kind = table.get("kind")
    if kind == "plane":
        return Plane(point=np.asarray(table["point"], float),
                     normal=np.asarray(table["normal"], float))
    if kind == "sphere":
        return Sphere(center=np.asarray(table["center"], float),
                      radius=float(table["radius"]))
    if kind == "turntable":
        return Turntable(center=np.asarray(table["center"], float),
                         axis=np.asarray(table["axis"], float),
                         radius=float(table["radius"]),
                         inertia=float(table["inertia"]),
                         viscous=float(table.get("viscous", 0.01)))
    raise ScenarioError(f"surface.kind must be plane|sphere|turntable, got {kind!r}")


def _build_camera(table: dict) -> CameraModel:
    if "rpy" in table:
        R = rot_rpy(*[float(v) for v in table["rpy"]])
    else:
        R = rot_x(np.pi)  # straight down, camera x along robot x
    return CameraModel(
        fx=float(table.get("fx", 140.0)), fy=float(table.get("fy", 140.0)),
        cx=float(table.get("cx", 80.0)), cy=float(table.get("cy", 60.0)),
        width=int(table.get("width", 160)), height=int(table.get("height", 120)),
        rotation=R, translation=np.asarray(table["position"], float),
    )


def _path_from_spec(spec: dict, surface, camera_spec, base_dir: Path,
                    reference: DesiredPath | None = None) -> DesiredPath:
    kind = spec.get("kind")
    spacing = float(spec.get("spacing", 0.002))

    if kind == "file":
        return load_path(base_dir / spec["path"])

    if kind == "clicks":
        if camera_spec is None:
            raise ScenarioError("clicks path source needs a [camera] table")
        camera = _build_camera(camera_spec)
        cloud = synth_cloud(surface, camera, noise=float(spec.get("noise", 0.0)),
                            seed=int(spec.get("seed", 0)))
        # the camera-to-robot transform comes from a calibration routine;
        # a residual extrinsic bias misregisters the acquired path
        calib = camera_spec.get("calibration_offset")
        mapping_camera = camera
        if calib is not None:
            mapping_camera = CameraModel(
                fx=camera.fx, fy=camera.fy, cx=camera.cx, cy=camera.cy,
                width=camera.width, height=camera.height,
                rotation=camera.rotation,
                translation=camera.translation + np.asarray(calib, float))
        if "pixels" in spec:
            pixels = [tuple(p) for p in spec["pixels"]]
        elif "pixels_from_reference" in spec and reference is not None:
            # project clicks along the reference pattern through the camera
            n_clicks = int(spec["pixels_from_reference"])
            cum = reference.cumulative_arclength()
            pixels = []
            for s in np.linspace(0.0, cum[-1], n_clicks):
                p_cam = camera.rotation.T @ (reference.point_at_arclength(s)
                                             - camera.translation)
                u, v = camera.project(p_cam)
                pixels.append((round(u), round(v)))
        else:
            raise ScenarioError("clicks path needs 'pixels' or 'pixels_from_reference'")
        return pixel_path_to_3d(pixels, cloud, mapping_camera, spacing=spacing)

    if kind == "line":
        a = np.asarray(spec["from"], float)
        b = np.asarray(spec["to"], float)
        pts = resample_polyline(np.stack([a, b]), spacing)
    elif kind == "sine":
        a = np.asarray(spec["from"], float)
        b = np.asarray(spec["to"], float)
        amp = float(spec["amplitude"])
        cycles = float(spec.get("cycles", 1.0))
        axis = b - a
        length = np.linalg.norm(axis)
        axis = axis / length
        n0 = _surface_normal_at(surface, a)
        lateral = np.cross(n0, axis)
        lateral /= np.linalg.norm(lateral)
        s = np.linspace(0.0, length, max(int(length / spacing) * 4, 64))
        raw = a[None, :] + s[:, None] * axis[None, :] \
            + (amp * np.sin(2.0 * np.pi * cycles * s / length))[:, None] * lateral[None, :]
        pts = resample_polyline(raw, spacing)
    elif kind == "arc":
        center = np.asarray(spec["center"], float)
        radius = float(spec["radius"])
        start = np.radians(float(spec.get("start_deg", 0.0)))
        end = np.radians(float(spec.get("end_deg", 180.0)))
        n0 = _surface_normal_at(surface, center)
        u = np.cross(n0, [1.0, 0.0, 0.0])
        if np.linalg.norm(u) < 1e-6:
            u = np.cross(n0, [0.0, 1.0, 0.0])
        u /= np.linalg.norm(u)
        v = np.cross(n0, u)
        th = np.linspace(start, end, max(int(abs(end - start) * radius / spacing) * 4, 64))
        raw = center[None, :] + radius * (np.cos(th)[:, None] * u[None, :]
                                          + np.sin(th)[:, None] * v[None, :])
        pts = resample_polyline(raw, spacing)
    else:
        raise ScenarioError(f"path.kind must be line|sine|arc|file|clicks, got {kind!r}")

    if isinstance(surface, Sphere):
        # snap to the ball and use radial normals
        rel = pts - surface.center
        rel /= np.linalg.norm(rel, axis=1)[:, None]
        pts = surface.center + surface.radius * rel
        normals = rel
    else:
        normals = np.tile(_surface_normal_at(surface, pts[0]), (pts.shape[0], 1))
    return DesiredPath(pts, normals, closed=bool(spec.get("closed", False)))


@dataclass
class Scenario:
    name: str
    model: RobotModel
    surface: object
    contact: ContactParams
    path: DesiredPath
    operator: OperatorModel
    modes: list
    trials: int
    seed0: int
    timeout: float = 120.0
    end_tolerance: float = 0.003
    turntable_target: float | None = None
    hover: float = 0.01
    start_q: np.ndarray | None = None
    ik_seed: np.ndarray = field(default_factory=lambda: np.asarray(DEFAULT_IK_SEED))
    gt_path: DesiredPath | None = None
    _start_cache: np.ndarray | None = None
    _ideal_cache: dict = field(default_factory=dict)

    @property
    def reference(self) -> DesiredPath:
        """Metric ground truth: the real pattern, not the acquired path."""
        return self.gt_path if self.gt_path is not None else self.path

    def fresh_surface(self):
        return self.surface.copy() if isinstance(self.surface, Turntable) else self.surface

    def start_joints(self) -> np.ndarray:
        if self.start_q is not None:
            return np.asarray(self.start_q, float)
        if self._start_cache is None:
            frame = frame_at(self.path, 0)
            pos = self.path.points[0] + self.hover * frame.n_hat
            rot = orientation_at(self.path, 0)
            try:
                self._start_cache = solve_ik(self.model, pos, rot, self.ik_seed)
            except IKError as e:
                raise ScenarioError(f"{self.name}: start pose unreachable: {e}") from e
        return self._start_cache

    def start_state(self) -> JointState:
        return JointState(self.start_joints().copy(), np.zeros(self.model.dof))

    def ideal_trajectory(self, op: OperatorModel):
        key = (round(op.speed, 9), round(op.press_depth, 9))
        if key not in self._ideal_cache:
            self._ideal_cache[key] = build_ideal_trajectory(
                self.model, self.path, op, self.start_joints())
        return self._ideal_cache[key]

    def seeds(self) -> list:
        return list(range(self.seed0, self.seed0 + self.trials))


def _operator_from(table: dict) -> OperatorModel:
    op = OperatorModel()
    for key in ("lookahead", "gain", "damping", "press", "press_depth",
                "tremor_sigma", "tremor_effort_gain", "tremor_effort_cap", "joint_tremor_sigma", "delay", "cmd_max", "cmd_quantum",
                "speed", "update_period", "wrist_gain", "align_gain"):
        if key in table:
            setattr(op, key, float(table[key]))
    if "tremor_band" in table:
        op.tremor_band = tuple(float(v) for v in table["tremor_band"])
    if "joint_tremor_band" in table:
        op.joint_tremor_band = tuple(float(v) for v in table["joint_tremor_band"])
    if "joint_tremor_weights" in table:
        op.joint_tremor_weights = tuple(float(v) for v in table["joint_tremor_weights"])
    return op


def load_scenario(file) -> Scenario:
    """Parse a scenario TOML; raises ScenarioError with file context."""
    file = Path(file)
    try:
        with open(file, "rb") as f:
            doc = tomllib.load(f)
    except FileNotFoundError:
        raise ScenarioError(f"scenario file not found: {file}")
    except tomllib.TOMLDecodeError as e:
        raise ScenarioError(f"{file}: {e}") from e

    try:
        model_ref = doc.get("model", "arm7")
        model_path = data_file(f"{model_ref}.toml") if not str(model_ref).endswith(".toml") \
            else file.parent / model_ref
        model = load_robot_model(model_path)

        surface = _build_surface(doc["surface"])
        contact_tbl = doc.get("contact", {})
        contact = ContactParams(
            stiffness=float(contact_tbl.get("stiffness", 2.0e4)),
            damping=float(contact_tbl.get("damping", 50.0)),
            friction=float(contact_tbl.get("friction", 0.3)),
        )
        reference = None
        if "reference" in doc:
            reference = _path_from_spec(doc["reference"], surface, None, file.parent)
        path = _path_from_spec(doc["path"], surface, doc.get("camera"), file.parent,
                               reference=reference)

        runs = doc.get("runs", {})
        modes = list(runs.get("modes", ["uni", "bi", "uni_vf", "bi_vf"]))
        bad = [m for m in modes if m not in ("uni", "bi", "uni_vf", "bi_vf")]
        if bad:
            raise ScenarioError(f"{file}: unknown modes {bad}")

        start = doc.get("start", {})
        tt = doc.get("turntable_target_deg")
        return Scenario(
            name=str(doc.get("name", file.stem)),
            model=model,
            surface=surface,
            contact=contact,
            path=path,
            operator=_operator_from(doc.get("operator", {})),
            modes=modes,
            trials=int(runs.get("trials", 5)),
            seed0=int(runs.get("seed0", 0)),
            timeout=float(doc.get("timeout", 120.0)),
            end_tolerance=float(doc.get("end_tolerance", 0.003)),
            turntable_target=np.radians(float(tt)) if tt is not None else None,
            hover=float(start.get("hover", 0.01)),
            start_q=np.asarray(start["q"], float) if "q" in start else None,
            ik_seed=np.asarray(start.get("ik_seed", DEFAULT_IK_SEED), float),
            gt_path=reference,
        )
    except KeyError as e:
        raise ScenarioError(f"{file}: missing required field {e}") from e
