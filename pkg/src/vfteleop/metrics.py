"""Evaluation metrics: spectral arc length, path error, contact losses.

A TrialRecord is the 100 Hz log of one teleoperation trial (time, joints,
tool position, measured normal force, contact flag, constraint index) plus
metadata. The metrics mirror the evaluation used for the teleop
configurations: spectral arc length of the speed profile (larger = less
smooth), mean/variance of the minimum distance to the reference path,
debounced count of contact losses, and execution time, aggregated per mode.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import butter, filtfilt
from scipy.spatial import cKDTree

from .paths import DesiredPath, resample_polyline

MODES = ("uni", "bi", "uni_vf", "bi_vf")
MODE_LABELS = {"uni": "uni", "bi": "bi", "uni_vf": "uni-VF", "bi_vf": "bi-VF"}
RECORD_RATE = 100.0          # Hz
SPEED_FILTER_CUTOFF = 20.0   # Hz low-pass before the smoothness metric
GT_DENSIFY_SPACING = 1e-4    # m, reference-path resampling for the error metric
CONTACT_DEBOUNCE = 0.05      # s, dropouts shorter than this are flickers


class MetricsError(Exception):
    pass


@dataclass
class TrialRecord:
    t: np.ndarray
    q: np.ndarray
    x: np.ndarray
    f_n: np.ndarray
    in_contact: np.ndarray
    index: np.ndarray
    mode: str = ""
    scenario: str = ""
    seed: int = 0
    status: str = "completed"
    duration: float = 0.0

    def __post_init__(self):
        self.t = np.asarray(self.t, float)
        self.q = np.asarray(self.q, float)
        self.x = np.asarray(self.x, float)
        self.f_n = np.asarray(self.f_n, float)
        self.in_contact = np.asarray(self.in_contact, bool)
        self.index = np.asarray(self.index, int)
        if len(self.t) >= 2:
            dt = np.diff(self.t)
            if np.any(dt <= 0):
                raise MetricsError("record timestamps must be strictly increasing")
            if np.any(np.abs(dt - 1.0 / RECORD_RATE) > 1e-9):
                raise MetricsError("record must be uniformly sampled at 100 Hz")


def sal(speed, dt: float, omega_c: float = 40.0 * np.pi) -> float:
    """Spectral arc length of a speed profile; larger = less smooth.

    Magnitude spectrum via an FFT zero-padded to >= 4x the signal length,
    normalized by the DC value; the arc length of the normalized spectrum
    over [0, omega_c] is integrated by the trapezoidal rule with central-
    difference derivatives. The floor term (1/omega_c) integrates to 1, so
    the output is bounded below by 1.
    """
    v = np.asarray(speed, float)
    if v.ndim != 1 or v.shape[0] < 64:
        raise MetricsError(f"speed profile needs >= 64 samples, got {v.shape}")
    if dt <= 0 or dt > np.pi / omega_c:
        raise MetricsError(
            f"dt={dt} too coarse: Nyquist must reach omega_c={omega_c:.3f} rad/s")
    nfft = 1 << int(np.ceil(np.log2(4 * v.shape[0])))
    V = np.abs(np.fft.rfft(v, nfft))
    if V[0] == 0.0:
        raise MetricsError("SAL undefined: V(0) = 0 (all-zero speed)")
    Vh = V / V[0]
    om = 2.0 * np.pi * np.fft.rfftfreq(nfft, dt)
    dVdw = np.gradient(Vh, om)
    sel = om <= omega_c
    om_g = om[sel]
    der = dVdw[sel]
    if om_g[-1] < omega_c:  # close the domain exactly at omega_c
        om_g = np.append(om_g, omega_c)
        der = np.append(der, np.interp(omega_c, om, dVdw))
    integrand = np.sqrt((1.0 / omega_c) ** 2 + der ** 2)
    return float(np.trapz(integrand, om_g))


def speed_profile(record: TrialRecord) -> np.ndarray:
    """|dx/dt| from recorded positions: central differences + 20 Hz low-pass."""
    x = record.x
    if x.shape[0] < 64:
        raise MetricsError("record too short for a speed profile")
    dt = 1.0 / RECORD_RATE
    vel = np.gradient(x, dt, axis=0)
    speed = np.linalg.norm(vel, axis=1)
    b, a = butter(2, SPEED_FILTER_CUTOFF / (RECORD_RATE / 2.0))
    return filtfilt(b, a, speed)


def record_sal(record: TrialRecord) -> float:
    return sal(speed_profile(record), 1.0 / RECORD_RATE)


def densify_path(gt, spacing: float = GT_DENSIFY_SPACING) -> np.ndarray:
    pts = gt.points if isinstance(gt, DesiredPath) else np.asarray(gt, float)
    return resample_polyline(pts, spacing)


def trajectory_error(traj, gt, in_contact=None) -> tuple[float, float]:
    """Mean and population variance (mm, mm^2) of the min distance to gt.

    gt is densified at 0.1 mm; when contact flags are given, only samples
    between the first and last contact count. Raises when no contact
    samples exist.
    """
    traj = np.asarray(traj, float)
    if in_contact is not None:
        in_contact = np.asarray(in_contact, bool)
        hits = np.nonzero(in_contact)[0]
        if hits.size == 0:
            raise MetricsError("no contact samples in the record")
        traj = traj[hits[0]: hits[-1] + 1]
    dense = densify_path(gt)
    d = cKDTree(dense).query(traj)[0] * 1000.0  # mm
    return float(np.mean(d)), float(np.var(d))


def contact_losses(in_contact, dt: float, debounce: float = CONTACT_DEBOUNCE) -> int:
    """Debounced count of contact -> no-contact transitions.

    Only dropouts lasting at least `debounce` seconds between the first and
    last contact sample are counted.
    """
    flags = np.asarray(in_contact, bool)
    hits = np.nonzero(flags)[0]
    if hits.size == 0:
        return 0
    window = flags[hits[0]: hits[-1] + 1]
    count = 0
    run = 0
    for f in window:
        if f:
            if run > 0 and run * dt >= debounce:
                count += 1
            run = 0
        else:
            run += 1
    return count


@dataclass
class TrialMetrics:
    mode: str
    seed: int
    sal: float
    mean_error_mm: float
    error_var_mm2: float
    error_std_mm: float
    contact_losses: int
    duration_s: float
    status: str = "completed"


def trial_metrics(record: TrialRecord, gt) -> TrialMetrics:
    mean_mm, var_mm2 = trajectory_error(record.x, gt, record.in_contact)
    return TrialMetrics(
        mode=record.mode,
        seed=record.seed,
        sal=record_sal(record),
        mean_error_mm=mean_mm,
        error_var_mm2=var_mm2,
        error_std_mm=float(np.sqrt(var_mm2)),
        contact_losses=contact_losses(record.in_contact, 1.0 / RECORD_RATE),
        duration_s=record.duration,
        status=record.status,
    )


_METRIC_FIELDS = ("mean_error_mm", "error_std_mm", "error_var_mm2", "sal",
                  "contact_losses", "duration_s")


@dataclass
class MetricsReport:
    """Per-mode mean/variance of every metric over a set of trials."""
    modes: list
    count: dict
    mean: dict   # metric -> mode -> mean over trials
    var: dict    # metric -> mode -> population variance over trials

    def to_markdown(self) -> str:
        headers = [MODE_LABELS.get(m, m) for m in self.modes]
        lines = ["| metric | " + " | ".join(headers) + " |",
                 "|---|" + "---|" * len(self.modes)]
        for f in _METRIC_FIELDS:
            row = [f"{self.mean[f][m]:.3f}" for m in self.modes]
            lines.append(f"| {f} (mean) | " + " | ".join(row) + " |")
            row = [f"{self.var[f][m]:.3f}" for m in self.modes]
            lines.append(f"| {f} (variance over trials) | " + " | ".join(row) + " |")
        lines.append("| trials | " + " | ".join(str(self.count[m]) for m in self.modes) + " |")
        return "\n".join(lines)

    def to_csv(self) -> str:
        lines = ["metric,stat," + ",".join(self.modes)]
        for f in _METRIC_FIELDS:
            lines.append(f"{f},mean," + ",".join(repr(self.mean[f][m]) for m in self.modes))
            lines.append(f"{f},variance," + ",".join(repr(self.var[f][m]) for m in self.modes))
        lines.append("trials,count," + ",".join(str(self.count[m]) for m in self.modes))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"modes": list(self.modes), "count": self.count,
                "mean": self.mean, "variance": self.var}


def aggregate(metrics: list[TrialMetrics]) -> MetricsReport:
    """Group per-trial metrics by mode; means and population variances."""
    if not metrics:
        raise MetricsError("no trial metrics to aggregate")
    modes = [m for m in MODES if any(t.mode == m for t in metrics)]
    extra = sorted({t.mode for t in metrics} - set(modes))
    modes += extra
    count = {}
    mean = {f: {} for f in _METRIC_FIELDS}
    var = {f: {} for f in _METRIC_FIELDS}
    for m in modes:
        group = [t for t in metrics if t.mode == m]
        count[m] = len(group)
        for f in _METRIC_FIELDS:
            vals = np.array([getattr(t, f) for t in group], float)
            mean[f][m] = float(np.mean(vals))
            var[f][m] = float(np.var(vals))
    return MetricsReport(modes=modes, count=count, mean=mean, var=var)


def save_record(record: TrialRecord, csv_path) -> None:
    """Persist a record as CSV plus a JSON metadata sidecar.

    Floats are written with shortest round-trip repr, so identical records
    produce byte-identical files.
    """
    csv_path = Path(csv_path)
    dof = record.q.shape[1]
    cols = ["t"] + [f"q{i}" for i in range(dof)] + ["x", "y", "z", "f_n", "contact", "idx"]
    lines = [",".join(cols)]
    for i in range(record.t.shape[0]):
        vals = [repr(float(record.t[i]))]
        vals += [repr(float(v)) for v in record.q[i]]
        vals += [repr(float(v)) for v in record.x[i]]
        vals.append(repr(float(record.f_n[i])))
        vals.append("1" if record.in_contact[i] else "0")
        vals.append(str(int(record.index[i])))
        lines.append(",".join(vals))
    csv_path.write_text("\n".join(lines) + "\n")
    meta = {"v": 1, "mode": record.mode, "scenario": record.scenario,
            "seed": record.seed, "status": record.status, "duration": record.duration}
    csv_path.with_suffix(".json").write_text(json.dumps(meta, indent=1) + "\n")


def load_record(csv_path) -> TrialRecord:
    csv_path = Path(csv_path)
    lines = csv_path.read_text().strip().split("\n")
    header = lines[0].split(",")
    dof = sum(1 for c in header if c.startswith("q"))
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    meta = json.loads(csv_path.with_suffix(".json").read_text())
    return TrialRecord(
        t=data[:, 0],
        q=data[:, 1:1 + dof],
        x=data[:, 1 + dof:4 + dof],
        f_n=data[:, 4 + dof],
        in_contact=data[:, 5 + dof] > 0.5,
        index=data[:, 6 + dof].astype(int),
        mode=meta["mode"], scenario=meta["scenario"], seed=meta["seed"],
        status=meta["status"], duration=meta["duration"],
    )
