"""Rigid work surfaces and the penalty contact law.

Surfaces are signed-distance shapes: a plane, a sphere (for writing on a
ball), and a turntable (a spinning disk with its own rotational dynamics).
Contact is a one-sided spring-damper along the surface normal plus
regularized Coulomb friction on the tangential slip.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .so3 import normalize

SLIP_EPS = 1e-3  # m/s; friction is linearly regularized below this slip speed


@dataclass
class ContactParams:
    stiffness: float = 2.0e4   # N/m
    damping: float = 50.0      # N s/m
    friction: float = 0.3      # Coulomb coefficient

    def __post_init__(self):
        if self.stiffness <= 0:
            raise ValueError("contact stiffness must be positive")
        if self.damping < 0 or self.friction < 0:
            raise ValueError("contact damping and friction must be non-negative")


@dataclass
class Plane:
    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        self.point = np.asarray(self.point, float)
        self.normal = normalize(np.asarray(self.normal, float))


@dataclass
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        self.center = np.asarray(self.center, float)
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")


@dataclass
class Turntable:
    """Free-spinning disk; contact friction is what drags it around."""
    center: np.ndarray
    axis: np.ndarray
    radius: float
    inertia: float            # kg m^2 about the spin axis
    viscous: float = 0.01     # N m s
    angle: float = 0.0        # rad, wrapped to [0, 2pi)
    omega: float = 0.0        # rad/s

    def __post_init__(self):
        self.center = np.asarray(self.center, float)
        self.axis = normalize(np.asarray(self.axis, float))
        if self.radius <= 0:
            raise ValueError("turntable radius must be positive")
        if self.inertia <= 0:
            raise ValueError("turntable inertia must be positive")

    def copy(self) -> "Turntable":
        return Turntable(self.center.copy(), self.axis.copy(), self.radius,
                         self.inertia, self.viscous, self.angle, self.omega)


SurfaceModel = Plane | Sphere | Turntable


def signed_distance(surface, x) -> tuple[float, np.ndarray]:
    """Signed distance from the surface and outward normal at the closest point."""
    if isinstance(surface, Plane):
        return float((x - surface.point) @ surface.normal), surface.normal
    if isinstance(surface, Sphere):
        r = x - surface.center
        d = np.linalg.norm(r)
        if d < 1e-12:
            return -surface.radius, np.array([0.0, 0.0, 1.0])
        return float(d - surface.radius), r / d
    if isinstance(surface, Turntable):
        rel = x - surface.center
        h = float(rel @ surface.axis)
        radial = rel - h * surface.axis
        if np.linalg.norm(radial) > surface.radius:
            return np.inf, surface.axis
        return h, surface.axis
    raise TypeError(f"unknown surface variant: {type(surface).__name__}")


def surface_velocity(surface, x) -> np.ndarray:
    """Velocity of the surface material point currently under x."""
    if isinstance(surface, Turntable):
        rel = x - surface.center
        return surface.omega * np.cross(surface.axis, rel)
    return np.zeros(3)


def contact_force(surface, x, xd, params: ContactParams):
    """Penalty contact force on the tool tip.

    Returns (force, in_contact, normal). Zero force whenever the signed
    distance is non-negative; otherwise a non-adhesive normal force
    max(0, -k*phi - b*(xd . n)) plus Coulomb friction bounded by mu times the
    normal force, opposing the tangential slip relative to the surface.
    """
    x = np.asarray(x, float)
    xd = np.asarray(xd, float)
    phi, n = signed_distance(surface, x)
    if not np.isfinite(phi):
        if np.isnan(phi):
            raise ValueError("contact query with non-finite position")
        return np.zeros(3), False, n
    if phi >= 0.0:
        return np.zeros(3), False, n

    fn = max(0.0, -params.stiffness * phi - params.damping * float(xd @ n))
    force = fn * n

    if params.friction > 0.0 and fn > 0.0:
        slip = (xd - surface_velocity(surface, x))
        slip_t = slip - float(slip @ n) * n
        speed = float(np.linalg.norm(slip_t))
        if speed > 1e-12:
            scale = min(1.0, speed / SLIP_EPS)
            force = force - params.friction * fn * scale * (slip_t / speed)
    return force, True, n


def turntable_step(surface: Turntable, force, point, dt: float) -> Turntable:
    """Advance the turntable under a contact force applied at a point.

    Semi-implicit update of the spin state; the angle wraps to [0, 2pi).
    Mutates and returns the surface.
    """
    if not isinstance(surface, Turntable):
        raise TypeError("turntable_step requires a turntable surface")
    rel = np.asarray(point, float) - surface.center
    torque = float(surface.axis @ np.cross(rel, np.asarray(force, float)))
    alpha = (torque - surface.viscous * surface.omega) / surface.inertia
    surface.omega += alpha * dt
    surface.angle = (surface.angle + surface.omega * dt) % (2.0 * np.pi)
    return surface
