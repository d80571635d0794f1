"""Organized point clouds, surface-normal estimation, and click-to-path.

Clouds are W x H grids of camera-frame 3D points with a validity mask, the
layout an RGB-D sensor produces. Normals come from either a local
covariance fit (eigenvector of the smallest eigenvalue) or the smoothed
cross product of horizontal/vertical 3D gradients accumulated with integral
images. Image-space clicks become a robot-frame path by sampling the cloud,
resampling at uniform arc length, attaching integral-image normals, and
applying the camera-to-robot extrinsics.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .paths import DesiredPath, resample_polyline
from .so3 import is_rotation
from .surfaces import Plane, Sphere, Turntable

DEFAULT_INTEGRAL_WINDOW = 4  # half-size in pixels for gradient smoothing


class PerceptionError(Exception):
    pass


@dataclass
class OrganizedPointCloud:
    width: int
    height: int
    points: np.ndarray   # (height, width, 3), camera frame, m
    valid: np.ndarray    # (height, width) bool

    def __post_init__(self):
        self.points = np.asarray(self.points, float)
        self.valid = np.asarray(self.valid, bool)
        if self.points.shape != (self.height, self.width, 3):
            raise ValueError(f"points shape {self.points.shape} != (H,W,3)")
        if self.valid.shape != (self.height, self.width):
            raise ValueError("valid mask shape mismatch")

    def point(self, u: int, v: int) -> np.ndarray:
        return self.points[v, u]

    def in_bounds(self, u: int, v: int) -> bool:
        return 0 <= u < self.width and 0 <= v < self.height


@dataclass
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))     # cam -> robot
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        self.rotation = np.asarray(self.rotation, float)
        self.translation = np.asarray(self.translation, float)
        if not is_rotation(self.rotation):
            raise ValueError("camera extrinsic rotation is not orthonormal")

    def to_robot(self, pts: np.ndarray) -> np.ndarray:
        return pts @ self.rotation.T + self.translation

    def rotate_to_robot(self, vecs: np.ndarray) -> np.ndarray:
        return vecs @ self.rotation.T

    def project(self, p_cam) -> tuple[float, float]:
        """Camera-frame point to (u, v) pixel coordinates."""
        p = np.asarray(p_cam, float)
        if p[2] <= 0:
            raise PerceptionError("cannot project a point at or behind the camera")
        return self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy


class IntegralImage:
    """Cumulative-sum table over a (H, W, C) image for O(1) window sums."""

    def __init__(self, data: np.ndarray):
        data = np.asarray(data, float)
        if data.ndim == 2:
            data = data[:, :, None]
        h, w, c = data.shape
        self.table = np.zeros((h + 1, w + 1, c))
        np.cumsum(np.cumsum(data, axis=0, out=self.table[1:, 1:]), axis=1,
                  out=self.table[1:, 1:])

    def rect_sum(self, v0: int, v1: int, u0: int, u1: int) -> np.ndarray:
        """Sum over pixel rows [v0, v1) and columns [u0, u1); four accesses."""
        t = self.table
        return t[v1, u1] - t[v0, u1] - t[v1, u0] + t[v0, u0]


def _orient_to_camera(normal: np.ndarray, point: np.ndarray) -> np.ndarray:
    # camera sits at the origin of the cloud frame
    return -normal if float(normal @ point) > 0.0 else normal


def normals_covariance(cloud: OrganizedPointCloud, pixel, k: int | None = None,
                       r: float | None = None):
    """Normal at one pixel from the covariance of its 3D neighborhood.

    The neighborhood is the k nearest valid grid neighbors by 3D distance,
    or every valid point within radius r. Returns a camera-facing unit
    normal, or None when the pixel is invalid, fewer than 3 neighbors
    exist, or the neighborhood is degenerate (mid/small eigenvalue ratio
    below 10).
    """
    if (k is None) == (r is None):
        raise ValueError("specify exactly one of k or r")
    u, v = int(pixel[0]), int(pixel[1])
    if not cloud.in_bounds(u, v):
        raise PerceptionError(f"pixel ({u},{v}) outside {cloud.width}x{cloud.height} image")
    if not cloud.valid[v, u]:
        return None
    p = cloud.points[v, u]

    if k is not None:
        half = max(2, int(np.ceil(np.sqrt(k))))
    else:
        # pixel window sized to cover radius r at this depth (plus margin)
        depth = max(abs(p[2]), 1e-6)
        half = int(np.ceil(1.5 * r * max(1.0, _focal_guess(cloud)) / depth)) + 2

    while True:
        u0, u1 = max(0, u - half), min(cloud.width, u + half + 1)
        v0, v1 = max(0, v - half), min(cloud.height, v + half + 1)
        win = cloud.points[v0:v1, u0:u1][cloud.valid[v0:v1, u0:u1]]
        d = np.linalg.norm(win - p, axis=1)
        if k is not None:
            if win.shape[0] >= k + 1 or (u0 == 0 and v0 == 0 and u1 == cloud.width and v1 == cloud.height):
                order = np.argsort(d, kind="stable")[: k + 1]  # includes the pixel itself
                nb = win[order]
                break
            half *= 2
        else:
            nb = win[d <= r]
            break

    if nb.shape[0] < 3:
        return None
    centered = nb - nb.mean(axis=0)
    C = centered.T @ centered / nb.shape[0]
    evals, evecs = np.linalg.eigh(C)
    if evals[1] / max(evals[0], 1e-30) < 10.0:
        return None
    n = evecs[:, 0]
    n = n / np.linalg.norm(n)
    return _orient_to_camera(n, p)


def _focal_guess(cloud: OrganizedPointCloud) -> float:
    """Pixels-per-unit-depth estimate for radius->window conversion."""
    vs, us = np.nonzero(cloud.valid)
    if len(us) < 2:
        return float(max(cloud.width, cloud.height))
    i, j = 0, len(us) // 2
    dp = np.linalg.norm(cloud.points[vs[j], us[j]] - cloud.points[vs[i], us[i]])
    dpx = np.hypot(float(us[j]) - us[i], float(vs[j]) - vs[i])
    if dp < 1e-9:
        return float(max(cloud.width, cloud.height))
    return dpx / dp * abs(cloud.points[vs[i], us[i], 2])


def _gradient_maps(cloud: OrganizedPointCloud):
    """Central-difference 3D gradients along u and v; one-sided at borders."""
    pts = cloud.points
    val = cloud.valid
    H, W = cloud.height, cloud.width

    gu = np.zeros((H, W, 3))
    gu_ok = np.zeros((H, W), bool)
    # central: right - left
    ok = val[:, 2:] & val[:, :-2]
    gu[:, 1:-1][ok] = (pts[:, 2:] - pts[:, :-2])[ok]
    gu_ok[:, 1:-1] = ok
    # borders: one-sided
    left = val[:, 0] & val[:, 1]
    gu[left, 0] = (pts[:, 1] - pts[:, 0])[left]
    gu_ok[left, 0] = True
    right = val[:, -1] & val[:, -2]
    gu[right, -1] = (pts[:, -1] - pts[:, -2])[right]
    gu_ok[right, -1] = True

    gv = np.zeros((H, W, 3))
    gv_ok = np.zeros((H, W), bool)
    ok = val[2:, :] & val[:-2, :]
    gv[1:-1][ok] = (pts[2:] - pts[:-2])[ok]
    gv_ok[1:-1] = ok
    top = val[0] & val[1]
    gv[0][top] = (pts[1] - pts[0])[top]
    gv_ok[0][top] = True
    bot = val[-1] & val[-2]
    gv[-1][bot] = (pts[-1] - pts[-2])[bot]
    gv_ok[-1][bot] = True
    return gu, gu_ok, gv, gv_ok


def normals_integral(cloud: OrganizedPointCloud, w: int = DEFAULT_INTEGRAL_WINDOW):
    """Per-pixel normals from integral-image-averaged 3D gradients.

    Builds six integral images (x/y/z channels of the horizontal and
    vertical gradient maps), averages each gradient over the (2w+1)^2
    window with count-weighted sums that skip invalid pixels, and takes the
    normalized cross product, camera-facing. Returns (normals, ok) arrays.
    """
    if w < 1:
        raise ValueError("window half-size must be >= 1")
    gu, gu_ok, gv, gv_ok = _gradient_maps(cloud)
    H, W = cloud.height, cloud.width

    ii_u = IntegralImage(np.where(gu_ok[:, :, None], gu, 0.0))
    ii_v = IntegralImage(np.where(gv_ok[:, :, None], gv, 0.0))
    cnt_u = IntegralImage(gu_ok.astype(float))
    cnt_v = IntegralImage(gv_ok.astype(float))

    vs = np.arange(H)
    us = np.arange(W)
    v0 = np.clip(vs - w, 0, H)
    v1 = np.clip(vs + w + 1, 0, H)
    u0 = np.clip(us - w, 0, W)
    u1 = np.clip(us + w + 1, 0, W)

    def window_mean(ii, cnt):
        t = ii.table
        s = (t[v1][:, u1] - t[v0][:, u1] - t[v1][:, u0] + t[v0][:, u0])
        c = cnt.table[:, :, 0]
        n = (c[v1][:, u1] - c[v0][:, u1] - c[v1][:, u0] + c[v0][:, u0])
        with np.errstate(invalid="ignore", divide="ignore"):
            return s / n[:, :, None], n > 0

    mu, ok_u = window_mean(ii_u, cnt_u)
    mv, ok_v = window_mean(ii_v, cnt_v)

    normals = np.cross(mu, mv)
    norms = np.linalg.norm(normals, axis=2)
    ok = ok_u & ok_v & (norms > 1e-12) & cloud.valid
    with np.errstate(invalid="ignore", divide="ignore"):
        normals = normals / norms[:, :, None]
    normals[~ok] = 0.0

    # flip toward the camera origin
    dots = np.einsum("hwc,hwc->hw", normals, cloud.points)
    flip = ok & (dots > 0)
    normals[flip] *= -1.0
    return normals, ok


def _nearest_valid_pixel(mask: np.ndarray, u: int, v: int, max_px: float):
    """Closest True pixel within Euclidean distance max_px, or None."""
    H, W = mask.shape
    best = None
    best_d = max_px + 1e-9
    r = int(np.ceil(max_px))
    for dv in range(-r, r + 1):
        for du in range(-r, r + 1):
            uu, vv = u + du, v + dv
            if 0 <= uu < W and 0 <= vv < H and mask[vv, uu]:
                d = float(np.hypot(du, dv))
                if d < best_d - 1e-12:
                    best_d = d
                    best = (uu, vv)
    return best


def _smooth_along(rows: np.ndarray, window: int) -> np.ndarray:
    """Moving average along the first axis with shrinking edge windows."""
    if window <= 1:
        return rows
    pad = window // 2
    csum = np.cumsum(np.vstack([np.zeros((1, rows.shape[1])), rows]), axis=0)
    n = rows.shape[0]
    lo = np.maximum(np.arange(n) - pad, 0)
    hi = np.minimum(np.arange(n) + pad + 1, n)
    return (csum[hi] - csum[lo]) / (hi - lo)[:, None]


def pixel_path_to_3d(clicks, cloud: OrganizedPointCloud, camera: CameraModel,
                     spacing: float = 0.002,
                     window: int = DEFAULT_INTEGRAL_WINDOW,
                     smooth: int = 9) -> DesiredPath:
    """Turn image clicks into a robot-frame path with surface normals.

    Each click maps to its cloud point (falling back to the nearest valid
    pixel within 5 px); the click polyline is resampled at uniform arc
    length `spacing`, normals are looked up from the integral-image
    estimator, and points and normals are transformed by the camera-to-
    robot extrinsics. Points and normals are conditioned by a `smooth`-
    sample moving average along the path: sensor noise and pixel
    quantization otherwise put mm-scale kinks and degree-scale normal
    jitter into the guidance. Unusable clicks are dropped with a warning;
    fewer than 2 usable clicks is an error.
    """
    if len(clicks) < 2:
        raise PerceptionError("need at least 2 clicks")
    pts_cam = []
    rejected = []
    for i, (u, v) in enumerate(clicks):
        u, v = int(round(u)), int(round(v))
        if not cloud.in_bounds(u, v):
            raise PerceptionError(f"click {i} at ({u},{v}) outside the image")
        if not cloud.valid[v, u]:
            found = _nearest_valid_pixel(cloud.valid, u, v, 5.0)
            if found is None:
                rejected.append(i)
                continue
            u, v = found
        pts_cam.append(cloud.points[v, u])
    if rejected:
        warnings.warn(f"clicks rejected (no valid cloud point within 5 px): {rejected}")
    # drop consecutive duplicates (two clicks can land on the same pixel)
    dedup = [p for j, p in enumerate(pts_cam)
             if j == 0 or np.linalg.norm(p - pts_cam[j - 1]) > 1e-9]
    if len(dedup) < 2:
        raise PerceptionError(f"fewer than 2 usable clicks (rejected: {rejected})")

    samples = resample_polyline(np.asarray(dedup), spacing)
    all_normals, ok = normals_integral(cloud, window)

    normals_cam = np.zeros_like(samples)
    have = np.zeros(len(samples), bool)
    for j, p in enumerate(samples):
        u, v = camera.project(p)
        u = int(np.clip(round(u), 0, cloud.width - 1))
        v = int(np.clip(round(v), 0, cloud.height - 1))
        if not ok[v, u]:
            found = _nearest_valid_pixel(ok, u, v, 5.0)
            if found is None:
                continue
            u, v = found
        normals_cam[j] = all_normals[v, u]
        have[j] = True
    if not np.any(have):
        raise PerceptionError("no surface normals available along the clicked path")
    # fill gaps from the nearest sample that has a normal
    idx_have = np.nonzero(have)[0]
    for j in np.nonzero(~have)[0]:
        normals_cam[j] = normals_cam[idx_have[np.argmin(np.abs(idx_have - j))]]

    samples = _smooth_along(samples, smooth)
    normals_cam = _smooth_along(normals_cam, max(smooth, 2 * smooth - 1))
    pts_robot = camera.to_robot(samples)
    n_robot = camera.rotate_to_robot(normals_cam)
    n_robot /= np.linalg.norm(n_robot, axis=1)[:, None]
    return DesiredPath(pts_robot, n_robot)


def synth_cloud(scene, camera: CameraModel, noise: float = 0.0, seed: int = 0,
                ) -> OrganizedPointCloud:
    """Ray-cast an analytic scene into an organized cloud (camera frame).

    `scene` is a surface primitive or list of primitives in the robot
    frame (Plane, Sphere, or Turntable rendered as a raised disk). Missed
    rays are invalid; Gaussian noise of standard deviation `noise` is added
    to the depth (z) of hit pixels, deterministically per seed.
    """
    prims = scene if isinstance(scene, (list, tuple)) else [scene]
    W, H = camera.width, camera.height
    us, vs = np.meshgrid(np.arange(W), np.arange(H))
    dirs = np.stack([(us - camera.cx) / camera.fx,
                     (vs - camera.cy) / camera.fy,
                     np.ones((H, W))], axis=2)  # z-depth parameterization

    Rt = camera.rotation.T
    t_best = np.full((H, W), np.inf)
    for prim in prims:
        if isinstance(prim, Plane):
            p0 = Rt @ (prim.point - camera.translation)
            n = Rt @ prim.normal
            denom = dirs @ n
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(np.abs(denom) > 1e-12, (p0 @ n) / denom, np.inf)
        elif isinstance(prim, Sphere):
            c = Rt @ (prim.center - camera.translation)
            b = dirs @ c
            dd = np.einsum("hwc,hwc->hw", dirs, dirs)
            disc = b * b - dd * (c @ c - prim.radius ** 2)
            with np.errstate(invalid="ignore"):
                root = np.sqrt(np.maximum(disc, 0.0))
                t = np.where(disc >= 0, (b - root) / dd, np.inf)
        elif isinstance(prim, Turntable):
            c = Rt @ (prim.center - camera.translation)
            n = Rt @ prim.axis
            denom = dirs @ n
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(np.abs(denom) > 1e-12, (c @ n) / denom, np.inf)
            hit = dirs * t[:, :, None]
            radial = hit - c
            radial -= (radial @ n)[:, :, None] * n
            t = np.where(np.linalg.norm(radial, axis=2) <= prim.radius, t, np.inf)
        else:
            raise PerceptionError(f"unsupported scene primitive: {type(prim).__name__}")
        t = np.where(t > 1e-9, t, np.inf)
        t_best = np.minimum(t_best, t)

    valid = np.isfinite(t_best)
    if noise > 0.0:
        rng = np.random.default_rng(seed)
        eps = rng.normal(0.0, noise, size=t_best.shape)
        t_best = np.where(valid, t_best + eps, t_best)
    pts = np.where(valid[:, :, None], dirs * np.where(valid, t_best, 0.0)[:, :, None], 0.0)
    return OrganizedPointCloud(width=W, height=H, points=pts, valid=valid)


_CLOUD_MAGIC = b"VFCLOUD1"


def save_cloud(cloud: OrganizedPointCloud, file) -> None:
    """Binary cloud file: magic, u32 width/height, f64 xyz grid, u8 validity."""
    with open(file, "wb") as f:
        f.write(_CLOUD_MAGIC)
        f.write(struct.pack("<II", cloud.width, cloud.height))
        f.write(cloud.points.astype("<f8").tobytes())
        f.write(cloud.valid.astype(np.uint8).tobytes())


def load_cloud(file) -> OrganizedPointCloud:
    raw = Path(file).read_bytes()
    if raw[:8] != _CLOUD_MAGIC:
        raise PerceptionError(f"{file}: not a cloud file (bad magic)")
    w, h = struct.unpack("<II", raw[8:16])
    npts = w * h
    off = 16
    pts = np.frombuffer(raw, dtype="<f8", count=npts * 3, offset=off).reshape(h, w, 3)
    off += npts * 3 * 8
    valid = np.frombuffer(raw, dtype=np.uint8, count=npts, offset=off).reshape(h, w).astype(bool)
    return OrganizedPointCloud(width=w, height=h, points=pts.copy(), valid=valid)
