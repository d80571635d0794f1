"""Small rotation helpers shared by kinematics, control, and perception."""

import numpy as np


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Extrinsic x-y-z (roll, pitch, yaw) rotation: Rz(yaw) Ry(pitch) Rx(roll)."""
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


def axis_angle(R: np.ndarray) -> np.ndarray:
    """Log map: rotation vector (axis * angle) of a rotation matrix.

    Raises ValueError for rotations within 1e-6 rad of pi, where the axis
    is ambiguous.
    """
    tr = np.trace(R)
    c = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(c)
    if angle < 1e-12:
        return np.zeros(3)
    if angle >= np.pi - 1e-6:
        raise ValueError(f"rotation angle {angle:.6f} rad too close to pi; axis ambiguous")
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return v * (angle / (2.0 * np.sin(angle)))


def is_rotation(R: np.ndarray, tol: float = 1e-8) -> bool:
    return (
        R.shape == (3, 3)
        and np.allclose(R @ R.T, np.eye(3), atol=tol)
        and np.linalg.det(R) > 0.0
    )


def normalize(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return v / n
