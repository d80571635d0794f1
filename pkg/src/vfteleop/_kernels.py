"""Compiled inner loops for serial-chain kinematics and dynamics.

All kernels are numba-jitted and operate on the packed model arrays held by
RobotModel (fixed parent rotations/translations, joint axes, masses, centers
of mass, rotational inertias). Everything is float64; fastmath stays off so
results are bit-reproducible. The recursions are written with explicit
scalar indexing into preallocated workspaces: at 1 kHz control rates the
allocation overhead of idiomatic vector code dominates otherwise.
"""

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _cross(a, b, out):
    x = a[1] * b[2] - a[2] * b[1]
    y = a[2] * b[0] - a[0] * b[2]
    z = a[0] * b[1] - a[1] * b[0]
    out[0] = x
    out[1] = y
    out[2] = z


@njit(cache=True, inline="always")
def _mv(R, v, out):
    """out = R @ v (out must not alias v)."""
    out[0] = R[0, 0] * v[0] + R[0, 1] * v[1] + R[0, 2] * v[2]
    out[1] = R[1, 0] * v[0] + R[1, 1] * v[1] + R[1, 2] * v[2]
    out[2] = R[2, 0] * v[0] + R[2, 1] * v[1] + R[2, 2] * v[2]


@njit(cache=True, inline="always")
def _mtv(R, v, out):
    """out = R.T @ v (out must not alias v)."""
    out[0] = R[0, 0] * v[0] + R[1, 0] * v[1] + R[2, 0] * v[2]
    out[1] = R[0, 1] * v[0] + R[1, 1] * v[1] + R[2, 1] * v[2]
    out[2] = R[0, 2] * v[0] + R[1, 2] * v[1] + R[2, 2] * v[2]


@njit(cache=True)
def rodrigues(axis, angle):
    """Rotation matrix for a rotation of `angle` about unit `axis`."""
    c = np.cos(angle)
    s = np.sin(angle)
    v = 1.0 - c
    x, y, z = axis[0], axis[1], axis[2]
    R = np.empty((3, 3))
    R[0, 0] = c + x * x * v
    R[0, 1] = x * y * v - z * s
    R[0, 2] = x * z * v + y * s
    R[1, 0] = y * x * v + z * s
    R[1, 1] = c + y * y * v
    R[1, 2] = y * z * v - x * s
    R[2, 0] = z * x * v - y * s
    R[2, 1] = z * y * v + x * s
    R[2, 2] = c + z * z * v
    return R


@njit(cache=True)
def joint_rotations(Rp, axis, q):
    """Per-joint rotation of link i expressed in its parent frame."""
    n = q.shape[0]
    Rj = np.empty((n, 3, 3))
    for i in range(n):
        Rj[i] = Rp[i] @ rodrigues(axis[i], q[i])
    return Rj


@njit(cache=True)
def link_poses(Rp, pp, axis, q):
    """Base-frame rotation and origin of every link frame."""
    n = q.shape[0]
    R = np.empty((n, 3, 3))
    p = np.empty((n, 3))
    Rprev = np.eye(3)
    pprev = np.zeros(3)
    for i in range(n):
        p[i] = pprev + Rprev @ pp[i]
        R[i] = Rprev @ Rp[i] @ rodrigues(axis[i], q[i])
        Rprev = R[i]
        pprev = p[i]
    return R, p


@njit(cache=True)
def tool_pose_kernel(Rp, pp, axis, q, Rt, pt):
    R, p = link_poses(Rp, pp, axis, q)
    n = q.shape[0]
    x = p[n - 1] + R[n - 1] @ pt
    Rtool = R[n - 1] @ Rt
    return x, Rtool


@njit(cache=True)
def jacobian_kernel(Rp, pp, axis, q, Rt, pt):
    """6xN task Jacobian at the tool tip: rows 0..2 linear, 3..5 angular."""
    R, p = link_poses(Rp, pp, axis, q)
    n = q.shape[0]
    x = p[n - 1] + R[n - 1] @ pt
    J = np.empty((6, n))
    for i in range(n):
        zx = R[i, 0, 0] * axis[i, 0] + R[i, 0, 1] * axis[i, 1] + R[i, 0, 2] * axis[i, 2]
        zy = R[i, 1, 0] * axis[i, 0] + R[i, 1, 1] * axis[i, 1] + R[i, 1, 2] * axis[i, 2]
        zz = R[i, 2, 0] * axis[i, 0] + R[i, 2, 1] * axis[i, 1] + R[i, 2, 2] * axis[i, 2]
        rx = x[0] - p[i, 0]
        ry = x[1] - p[i, 1]
        rz = x[2] - p[i, 2]
        J[0, i] = zy * rz - zz * ry
        J[1, i] = zz * rx - zx * rz
        J[2, i] = zx * ry - zy * rx
        J[3, i] = zx
        J[4, i] = zy
        J[5, i] = zz
    return J, x, R[n - 1] @ Rt


@njit(cache=True)
def _rnea_core(Rj, pp, axis, mass, com, inertia, qd, qdd, a0, tau):
    """Recursive Newton-Euler given per-joint rotations; writes into tau.

    Link-frame recursion; a0 is the base-origin acceleration in the base
    frame (pass -gravity for the standard gravity trick).
    """
    n = qd.shape[0]
    w = np.zeros((n, 3))
    dw = np.zeros((n, 3))
    F = np.zeros((n, 3))
    N = np.zeros((n, 3))
    ao = np.zeros(3)
    wp = np.zeros(3)
    dwp = np.zeros(3)
    t1 = np.zeros(3)
    t2 = np.zeros(3)
    t3 = np.zeros(3)

    ao[:] = a0
    for i in range(n):
        R = Rj[i]
        # wm = R^T wp ; w_i = wm + axis*qd
        _mtv(R, wp, t1)
        for k in range(3):
            w[i, k] = t1[k] + axis[i, k] * qd[i]
        # dw_i = R^T dwp + axis*qdd + wm x (axis*qd)
        _mtv(R, dwp, t2)
        for k in range(3):
            t3[k] = axis[i, k] * qd[i]
        _cross(t1, t3, t1)
        for k in range(3):
            dw[i, k] = t2[k] + axis[i, k] * qdd[i] + t1[k]
        # ao_i = R^T (ao_prev + dwp x pp + wp x (wp x pp))
        _cross(wp, pp[i], t1)
        _cross(wp, t1, t1)
        _cross(dwp, pp[i], t2)
        for k in range(3):
            t2[k] += ao[k] + t1[k]
        _mtv(R, t2, t1)
        ao[:] = t1
        # com acceleration and body wrench
        _cross(dw[i], com[i], t2)
        _cross(w[i], com[i], t3)
        _cross(w[i], t3, t3)
        for k in range(3):
            F[i, k] = mass[i] * (ao[k] + t2[k] + t3[k])
        _mv(inertia[i], w[i], t2)
        _cross(w[i], t2, t3)
        _mv(inertia[i], dw[i], t2)
        for k in range(3):
            N[i, k] = t2[k] + t3[k]
        wp[:] = w[i]
        dwp[:] = dw[i]

    fc = np.zeros(3)
    nc = np.zeros(3)
    for i in range(n - 1, -1, -1):
        if i < n - 1:
            # transport child wrench into frame i
            _mv(Rj[i + 1], fc, t1)
            _mv(Rj[i + 1], nc, t2)
            _cross(pp[i + 1], t1, t3)
            for k in range(3):
                nc[k] = t2[k] + t3[k]
                fc[k] = t1[k]
        _cross(com[i], F[i], t1)
        for k in range(3):
            nc[k] += N[i, k] + t1[k]
            fc[k] += F[i, k]
        tau[i] = axis[i, 0] * nc[0] + axis[i, 1] * nc[1] + axis[i, 2] * nc[2]


@njit(cache=True)
def rnea_kernel(Rp, pp, axis, mass, com, inertia, q, qd, qdd, grav):
    n = q.shape[0]
    Rj = joint_rotations(Rp, axis, q)
    tau = np.empty(n)
    _rnea_core(Rj, pp, axis, mass, com, inertia, qd, qdd, -grav, tau)
    return tau


@njit(cache=True)
def mass_and_bias(Rp, pp, axis, mass, com, inertia, q, qd, grav):
    """Inertia matrix and bias torque C(q,qd)qd + g(q) in one pass.

    M column j is the inverse-dynamics torque for unit qdd_j with zero
    velocity and zero gravity (the zero-velocity recursion collapses: links
    before j carry no motion); bias is inverse dynamics with qdd = 0.
    """
    n = q.shape[0]
    Rj = joint_rotations(Rp, axis, q)
    bias = np.empty(n)
    zqd = np.zeros(n)
    _rnea_core(Rj, pp, axis, mass, com, inertia, qd, zqd, -grav, bias)

    M = np.zeros((n, n))
    dw = np.zeros((n, 3))
    ao = np.zeros((n, 3))
    F = np.zeros((n, 3))
    N = np.zeros((n, 3))
    t1 = np.zeros(3)
    t2 = np.zeros(3)
    fc = np.zeros(3)
    nc = np.zeros(3)
    for j in range(n):
        # forward: motion exists only from link j outward
        for k in range(3):
            dw[j, k] = axis[j, k]
            ao[j, k] = 0.0
        for i in range(j + 1, n):
            R = Rj[i]
            _mtv(R, dw[i - 1], dw[i])
            _cross(dw[i - 1], pp[i], t1)
            for k in range(3):
                t2[k] = ao[i - 1, k] + t1[k]
            _mtv(R, t2, ao[i])
        for i in range(j, n):
            _cross(dw[i], com[i], t1)
            for k in range(3):
                F[i, k] = mass[i] * (ao[i, k] + t1[k])
            _mv(inertia[i], dw[i], N[i])
        # backward to the base: parents below j feel the child wrench
        fc[:] = 0.0
        nc[:] = 0.0
        for i in range(n - 1, -1, -1):
            if i < n - 1:
                _mv(Rj[i + 1], fc, t1)
                _mv(Rj[i + 1], nc, t2)
                _cross(pp[i + 1], t1, nc)
                for k in range(3):
                    nc[k] += t2[k]
                    fc[k] = t1[k]
            if i >= j:
                _cross(com[i], F[i], t1)
                for k in range(3):
                    nc[k] += N[i, k] + t1[k]
                    fc[k] += F[i, k]
            M[i, j] = axis[i, 0] * nc[0] + axis[i, 1] * nc[1] + axis[i, 2] * nc[2]
    return M, bias


@njit(cache=True)
def accel_kernel(Rp, pp, axis, mass, com, inertia, q, qd, tau, damping, grav):
    """Forward dynamics: solve M qdd = tau - bias - damping*qd."""
    M, bias = mass_and_bias(Rp, pp, axis, mass, com, inertia, q, qd, grav)
    rhs = tau - bias - damping * qd
    return np.linalg.solve(M, rhs)
