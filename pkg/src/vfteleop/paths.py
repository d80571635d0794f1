"""Desired paths on surfaces and the per-point guidance frame.

A path is an ordered list of 3D waypoints with a unit surface normal at
each. Constraint evaluation picks the closest waypoint to the tool (a
vertex-level argmin, ties to the lowest index) and builds the orthonormal
{normal, side, tangent} frame there. The desired tool orientation stacks
[side, tangent, -normal] as columns so the tool z-axis points into the
surface.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path as FsPath

import numpy as np

from .so3 import normalize

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class PathError(Exception):
    pass


class DegenerateFrameError(PathError):
    """Tangent parallel to the normal; the side direction is undefined."""


class DesiredPath:
    """Ordered waypoints with unit normals; optionally closed into a loop."""

    def __init__(self, points, normals, closed: bool = False):
        points = np.asarray(points, float)
        normals = np.asarray(normals, float)
        if points.ndim != 2 or points.shape[1] != 3:
            raise PathError(f"points must be (N,3), got {points.shape}")
        if points.shape[0] < 2:
            raise PathError("a path needs at least 2 points")
        if normals.shape != points.shape:
            raise PathError("points and normals must have equal length")
        norms = np.linalg.norm(normals, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise PathError("normals must be unit length to 1e-9")
        seg = np.diff(points, axis=0)
        if np.any(np.linalg.norm(seg, axis=1) == 0.0):
            raise PathError("consecutive path points must be distinct")
        if closed and np.linalg.norm(points[-1] - points[0]) == 0.0:
            raise PathError("closed path must not duplicate the closure point")
        self.points = points
        self.normals = normals
        self.closed = bool(closed)
        self._frames: list = [None] * points.shape[0]   # per-index frame cache
        self._orients: list = [None] * points.shape[0]

    def __len__(self):
        return self.points.shape[0]

    def cumulative_arclength(self) -> np.ndarray:
        if not hasattr(self, "_cum"):
            seg = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
            self._cum = np.concatenate([[0.0], np.cumsum(seg)])
        return self._cum

    def point_at_arclength(self, s: float) -> np.ndarray:
        """Segment-interpolated point at arc length s (clamped; wraps if closed)."""
        cum = self.cumulative_arclength()
        total = cum[-1]
        if self.closed:
            total_loop = total + np.linalg.norm(self.points[0] - self.points[-1])
            s = s % total_loop
            if s > total:  # on the closing segment
                t = (s - total) / (total_loop - total)
                return self.points[-1] + t * (self.points[0] - self.points[-1])
        else:
            s = min(max(s, 0.0), total)
        i = int(np.searchsorted(cum, s, side="right") - 1)
        i = min(i, len(self) - 2)
        seg = self.points[i + 1] - self.points[i]
        seg_len = np.linalg.norm(seg)
        t = 0.0 if seg_len == 0 else (s - cum[i]) / seg_len
        return self.points[i] + t * seg


@dataclass(frozen=True)
class PathFrame:
    n_hat: np.ndarray
    s_hat: np.ndarray
    t_hat: np.ndarray

    def as_matrix(self) -> np.ndarray:
        return np.stack([self.n_hat, self.s_hat, self.t_hat])


@dataclass(frozen=True)
class ConstraintResult:
    x_d: np.ndarray        # closest waypoint, m
    index: int
    frame: PathFrame
    d: np.ndarray          # x - x_d


def project_arclength(path: DesiredPath, x) -> float:
    """Arc length of the segment-level projection of x onto the polyline.

    Unlike the vertex-level constraint evaluation, this interpolates within
    segments; it serves path-following targets (operator lookahead), not
    the controller's constraint.
    """
    x = np.asarray(x, float)
    A = path.points[:-1]
    B = path.points[1:]
    AB = B - A
    denom = np.einsum("ij,ij->i", AB, AB)
    tpar = np.clip(np.einsum("ij,ij->i", x - A, AB) / denom, 0.0, 1.0)
    proj = A + tpar[:, None] * AB
    d2 = np.einsum("ij,ij->i", x - proj, x - proj)
    j = int(np.argmin(d2))
    cum = path.cumulative_arclength()
    return float(cum[j] + tpar[j] * np.sqrt(denom[j]))


def nearest_index(path: DesiredPath, x, min_index: int = 0) -> int:
    """Index of the closest waypoint to x; ties broken by lowest index.

    `min_index` restricts the search to indices >= min_index, used by the
    optional monotone-progress mode; the default 0 searches the whole path.
    """
    x = np.asarray(x, float)
    pts = path.points[min_index:]
    if pts.shape[0] == 0:
        raise PathError("min_index beyond the end of the path")
    d2 = np.einsum("ij,ij->i", pts - x, pts - x)
    return int(np.argmin(d2)) + min_index


def nearest_point(path: DesiredPath, x, min_index: int = 0) -> ConstraintResult:
    """Closest path waypoint to x (vertex-level argmin) plus its frame."""
    x = np.asarray(x, float)
    idx = nearest_index(path, x, min_index)
    frame = frame_at(path, idx)
    return ConstraintResult(x_d=path.points[idx], index=idx, frame=frame, d=x - path.points[idx])


def tangent_at(path: DesiredPath, index: int) -> np.ndarray:
    """Unit backward-difference tangent; forward difference at an open start."""
    npts = len(path)
    if not (0 <= index < npts):
        raise PathError(f"index {index} out of range for path of {npts} points")
    if index == 0:
        if path.closed:
            diff = path.points[0] - path.points[-1]
        else:
            diff = path.points[1] - path.points[0]
    else:
        diff = path.points[index] - path.points[index - 1]
    return normalize(diff)


def build_frame(n, t_raw) -> PathFrame:
    """Orthonormal right-handed frame from a unit normal and a raw tangent.

    The tangent is projected into the surface plane (estimated normals are
    noisy, so the raw tangent is rarely exactly orthogonal), then
    side = normal x tangent.
    """
    n = np.asarray(n, float)
    t_raw = np.asarray(t_raw, float)
    t_norm = np.linalg.norm(t_raw)
    if t_norm == 0.0:
        raise DegenerateFrameError("zero tangent")
    sin_angle = np.linalg.norm(np.cross(t_raw / t_norm, n))
    if sin_angle < 1e-6:
        raise DegenerateFrameError("tangent parallel to normal")
    t = t_raw - (t_raw @ n) * n
    t = normalize(t)
    s = np.cross(n, t)
    return PathFrame(n_hat=n, s_hat=s, t_hat=t)


def frame_at(path: DesiredPath, index: int) -> PathFrame:
    """Frame at a waypoint; cached, since paths are immutable."""
    f = path._frames[index]
    if f is None:
        f = build_frame(path.normals[index], tangent_at(path, index))
        path._frames[index] = f
    return f


def desired_orientation(frame: PathFrame) -> np.ndarray:
    """Tool-to-base rotation with columns [side, tangent, -normal]."""
    return np.column_stack([frame.s_hat, frame.t_hat, -frame.n_hat])


def orientation_at(path: DesiredPath, index: int) -> np.ndarray:
    """Cached desired tool orientation at a waypoint."""
    R = path._orients[index]
    if R is None:
        R = desired_orientation(frame_at(path, index))
        path._orients[index] = R
    return R


def resample_polyline(points, spacing: float) -> np.ndarray:
    """Resample a polyline at uniform arc-length spacing (endpoints kept)."""
    points = np.asarray(points, float)
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total == 0.0:
        raise PathError("cannot resample a zero-length polyline")
    count = max(int(round(total / spacing)), 1)
    s_new = np.linspace(0.0, total, count + 1)
    out = np.empty((count + 1, 3))
    for k, s in enumerate(s_new):
        i = min(int(np.searchsorted(cum, s, side="right") - 1), len(points) - 2)
        t = 0.0 if seg[i] == 0 else (s - cum[i]) / seg[i]
        out[k] = points[i] + t * (points[i + 1] - points[i])
    return out


def save_path(path: DesiredPath, file) -> None:
    """Write a path file (JSON: points, normals, closed; meters, base frame)."""
    doc = {
        "points": path.points.tolist(),
        "normals": path.normals.tolist(),
        "closed": path.closed,
    }
    FsPath(file).write_text(json.dumps(doc, indent=1))


def load_path(file) -> DesiredPath:
    """Read a path file; accepts .json or .toml with points/normals/closed."""
    file = FsPath(file)
    if file.suffix == ".toml":
        with open(file, "rb") as f:
            doc = tomllib.load(f)
    else:
        doc = json.loads(file.read_text())
    try:
        return DesiredPath(doc["points"], doc["normals"], doc.get("closed", False))
    except KeyError as e:
        raise PathError(f"{file}: missing field {e}") from e
