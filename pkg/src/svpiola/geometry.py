"""Elliptic domain, closest-point boundary projection, manufactured Stokes data."""
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ProjectionError

__all__ = [
    "SmoothDomain",
    "ManufacturedSolution",
    "levelset",
    "levelset_gradient",
    "project_to_boundary",
    "exact_fields",
]


@dataclass(frozen=True)
class SmoothDomain:
    """Ellipse ``x1^2/a^2 + x2^2/b^2 < 1``."""

    semi_axis_a: float = 1.5
    semi_axis_b: float = 1.0

    def __post_init__(self):
        if not (self.semi_axis_a > 0 and self.semi_axis_b > 0):
            raise ValueError("semi-axes must be positive")

    @property
    def area(self) -> float:
        return float(np.pi * self.semi_axis_a * self.semi_axis_b)

    def levelset(self, x):
        return levelset(self, x)


def levelset(domain: SmoothDomain, x):
    """phi(x) = x1^2/a^2 + x2^2/b^2 - 1 for points of shape (..., 2)."""
    x = np.asarray(x, dtype=float)
    a2 = domain.semi_axis_a ** 2
    b2 = domain.semi_axis_b ** 2
    return x[..., 0] ** 2 / a2 + x[..., 1] ** 2 / b2 - 1.0


def levelset_gradient(domain: SmoothDomain, x):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    g[..., 0] = 2.0 * x[..., 0] / domain.semi_axis_a ** 2
    g[..., 1] = 2.0 * x[..., 1] / domain.semi_axis_b ** 2
    return g


def project_to_boundary(domain: SmoothDomain, x, tol=1e-14, maxiter=50):
    """Closest point on the ellipse to each point in ``x``.

    With y(t) = (a cos t, b sin t), Newton's method on d/dt |y(t) - x|^2 = 0 is
    started from the nearest of 64 samples, so it stays in the basin of the
    global minimizer also for points inside the evolute. Steps are clipped to
    the sample spacing. Accepts a single point or an array of shape (n, 2);
    raises ProjectionError if any point fails to converge.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    a, b = domain.semi_axis_a, domain.semi_axis_b
    if np.any(np.all(pts == 0.0, axis=1)):
        raise ProjectionError("cannot project the ellipse center")
    x0, x1 = pts[:, 0], pts[:, 1]

    n = 64
    grid = 2 * np.pi * np.arange(n) / n
    dist = (a * np.cos(grid) - x0[:, None]) ** 2 + (b * np.sin(grid) - x1[:, None]) ** 2
    t = grid[np.argmin(dist, axis=1)]
    dt_max = 2 * np.pi / n
    c2 = b * b - a * a
    # residual size at which rounding dominates
    floor = 8 * np.finfo(float).eps * (abs(c2) + a * np.abs(x0) + b * np.abs(x1))

    converged = np.zeros(len(pts), dtype=bool)
    for _ in range(maxiter):
        c, s = np.cos(t), np.sin(t)
        h = c2 * s * c + a * x0 * s - b * x1 * c  # half of the derivative of the squared distance
        dh = c2 * (c * c - s * s) + a * x0 * c + b * x1 * s
        newton = np.where(dh > 0, -h / np.where(dh > 0, dh, 1.0), -np.sign(h) * dt_max)
        step = np.clip(newton, -dt_max, dt_max)
        converged = (np.abs(h) <= floor) | (np.abs(step) <= tol)
        if converged.all():
            break
        t = np.where(converged, t, t + step)
    y = np.stack([a * np.cos(t), b * np.sin(t)], axis=1)
    if not converged.all():
        raise ProjectionError(
            f"boundary projection failed for {int((~converged).sum())} point(s), "
            f"first at {pts[np.argmin(converged)].tolist()}"
        )
    return y[0] if single else y


# Velocity of the reference problem on the ellipse a = 1.5, b = 1, and its
# derivatives, expanded offline from the factored form.

def _u1(x, y):
    return (64 * x**4 * y / 27 + 8 * x**4 / 27 + 16 * x**2 * y**3 / 3
            + 4 * x**2 * y**2 - 16 * x**2 * y / 3 - 4 * x**2 / 3
            + 15 * y**4 / 2 - 9 * y**2 + 1.5)


def _u2(x, y):
    return (-128 * x**5 / 81 - 128 * x**3 * y**2 / 27 - 32 * x**3 * y / 27
            + 128 * x**3 / 27 - 8 * x * y**4 / 3 - 8 * x * y**3 / 3
            + 16 * x * y**2 / 3 + 8 * x * y / 3 - 8 * x / 3)


def _u1_x(x, y):
    return (256 * x**3 * y / 27 + 32 * x**3 / 27 + 32 * x * y**3 / 3
            + 8 * x * y**2 - 32 * x * y / 3 - 8 * x / 3)


def _u1_y(x, y):
    return (64 * x**4 / 27 + 16 * x**2 * y**2 + 8 * x**2 * y - 16 * x**2 / 3
            + 30 * y**3 - 18 * y)


def _u2_x(x, y):
    return (-640 * x**4 / 81 - 128 * x**2 * y**2 / 9 - 32 * x**2 * y / 9
            + 128 * x**2 / 9 - 8 * y**4 / 3 - 8 * y**3 / 3 + 16 * y**2 / 3
            + 8 * y / 3 - 8 / 3)


def _u2_y(x, y):
    return -_u1_x(x, y)


def _u1_xx(x, y):
    return 256 * x**2 * y / 9 + 32 * x**2 / 9 + 32 * y**3 / 3 + 8 * y**2 - 32 * y / 3 - 8 / 3


def _u1_yy(x, y):
    return 32 * x**2 * y + 8 * x**2 + 90 * y**2 - 18


def _u2_xx(x, y):
    return -2560 * x**3 / 81 - 256 * x * y**2 / 9 - 64 * x * y / 9 + 256 * x / 9


def _u2_yy(x, y):
    return -256 * x**3 / 27 - 32 * x * y**2 - 16 * x * y + 32 * x / 3


@dataclass(frozen=True)
class ManufacturedSolution:
    """Exact (u, p) with matching source term; evaluators take points (..., 2)."""

    velocity: Callable
    velocity_gradient: Callable
    pressure: Callable
    source: Callable
    nu: float


def exact_fields(domain: SmoothDomain = SmoothDomain(), nu: float = 1.0) -> ManufacturedSolution:
    """Manufactured solution on ``domain``.

    On the default ellipse this is the classical test problem; for other
    semi-axes the stream function is rescaled, ``u(x) = (t u1(sx, ty), s u2(sx, ty))``
    with ``s = 1.5/a``, ``t = 1/b``, which keeps ``div u = 0`` and ``u = 0`` on
    the boundary. The pressure ``10 (phi + 1/2)`` has zero mean on any ellipse.
    """
    if not nu > 0:
        raise ValueError("viscosity must be positive")
    a, b = domain.semi_axis_a, domain.semi_axis_b
    s, t = 1.5 / a, 1.0 / b

    def velocity(x):
        x = np.asarray(x, dtype=float)
        X, Y = s * x[..., 0], t * x[..., 1]
        return np.stack([t * _u1(X, Y), s * _u2(X, Y)], axis=-1)

    def velocity_gradient(x):
        x = np.asarray(x, dtype=float)
        X, Y = s * x[..., 0], t * x[..., 1]
        g = np.empty(x.shape[:-1] + (2, 2))
        g[..., 0, 0] = t * s * _u1_x(X, Y)
        g[..., 0, 1] = t * t * _u1_y(X, Y)
        g[..., 1, 0] = s * s * _u2_x(X, Y)
        g[..., 1, 1] = s * t * _u2_y(X, Y)
        return g

    def pressure(x):
        x = np.asarray(x, dtype=float)
        return 10.0 * (x[..., 0] ** 2 / a**2 + x[..., 1] ** 2 / b**2 - 0.5)

    def source(x):
        x = np.asarray(x, dtype=float)
        X, Y = s * x[..., 0], t * x[..., 1]
        lap1 = t * (s * s * _u1_xx(X, Y) + t * t * _u1_yy(X, Y))
        lap2 = s * (s * s * _u2_xx(X, Y) + t * t * _u2_yy(X, Y))
        return np.stack([
            -nu * lap1 + 20.0 * x[..., 0] / a**2,
            -nu * lap2 + 20.0 * x[..., 1] / b**2,
        ], axis=-1)

    return ManufacturedSolution(velocity, velocity_gradient, pressure, source, float(nu))
