"""Nonholonomic tracking layer for a unicycle robot."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .geometry import GeometryError, as_point, wrap_pi

log = logging.getLogger(__name__)

REAR_BAND = 0.01
REAR_HOLD = 0.5


@dataclass(frozen=True)
class UnicycleParams:
    nu_max: float
    omega_max: float
    kappa_nu: float = 1.0
    kappa_omega: float = 1.0
    n: int = 2
    eta: float = 0.1

    def validate(self) -> None:
        for name in ("nu_max", "omega_max", "kappa_nu", "kappa_omega", "eta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("n must be an integer >= 1")


@dataclass
class UnicycleState:
    x: NDArray[np.float64]
    theta: float

    def __post_init__(self):
        self.x = as_point(self.x)
        self.theta = wrap_pi(float(self.theta))


def band_gain(rho: float, eta: float) -> float:
    """Piecewise-linear push/pull gain across the avoidance band ``[0, eta]``."""
    if eta <= 0:
        raise ValueError("eta must be > 0")
    if rho < 0 or rho > eta:
        log.debug("band_gain: rho=%g outside [0, %g], clamped", rho, eta)
        rho = min(max(rho, 0.0), eta)
    s = 4.0 * rho / eta   # this form gives exactly +-1 at the ends
    if s <= 1.0:
        return 1.0 - s
    if s <= 3.0:
        return 0.0
    return 3.0 - s


def blended_vector(x, proj, m: int, rho: float, eta: float) -> NDArray[np.float64]:
    x = as_point(x)
    f = x - as_point(proj)
    L = math.hypot(f[0], f[1])
    if L == 0.0:
        raise GeometryError("x coincides with its projection")
    f /= L
    lam = band_gain(rho, eta)
    s = m * (1.0 - lam * lam)
    return np.array([lam * f[0] + s * f[1], -s * f[0] + lam * f[1]])


def track_command(u_mod, theta: float, p: UnicycleParams) -> tuple[float, float]:
    """Forward speed and turn rate that steer the heading onto ``u_mod``."""
    u = as_point(u_mod)
    speed = math.hypot(u[0], u[1])
    if speed == 0.0:
        return 0.0, 0.0
    err = theta - math.atan2(u[1], u[0])
    nu = p.kappa_nu * min(speed * math.cos(0.5 * err) ** (2 * p.n), p.nu_max)
    omega = -p.kappa_omega * p.omega_max * math.sin(err)
    return nu, omega


class UnicyclePlant:
    """RK4 kinematics with commands held over each step and the rear-stall escape."""

    dim = 3

    def __init__(self, params: UnicycleParams, theta0: float = 0.0):
        self.p = params
        self.theta0 = theta0
        self._rear_time = 0.0
        self.last_command = (0.0, 0.0)

    def initial(self, x0) -> NDArray[np.float64]:
        x0 = as_point(x0)
        return np.array([x0[0], x0[1], wrap_pi(self.theta0)])

    @staticmethod
    def position(y) -> NDArray[np.float64]:
        return y[:2].copy()

    def command(self, y, u_mod, dt: float) -> tuple[float, float]:
        nu, omega = track_command(u_mod, float(y[2]), self.p)
        u = as_point(u_mod)
        if math.hypot(*u) > 0:
            err = abs(wrap_pi(float(y[2]) - math.atan2(u[1], u[0])))
            if err > math.pi - REAR_BAND:
                self._rear_time += dt
                if self._rear_time > REAR_HOLD:
                    omega = 0.1 * self.p.omega_max
                    self._rear_time = 0.0
            else:
                self._rear_time = 0.0
        return nu, omega

    def prepare(self, y, field, dt: float):
        cmd = self.command(y, field(y[:2]), dt)
        self.last_command = cmd
        return cmd

    @staticmethod
    def step(y, h: float, field, cmd) -> NDArray[np.float64]:
        nu, omega = cmd

        def f(s):
            return np.array([nu * math.cos(s[2]), nu * math.sin(s[2]), omega])

        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        out = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[2] = wrap_pi(out[2])
        return out
