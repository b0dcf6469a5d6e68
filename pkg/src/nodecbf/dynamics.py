"""Double-integrator plant, ground-truth disturbance fields, and RK4.

States are flat float64 vectors ``[r; v]`` of length 6 (position in
meters, velocity in m/s); controls are accelerations of length 3.
"""

from dataclasses import dataclass

import numpy as np

from . import backend

STATE_DIM = 6
CONTROL_DIM = 3

_FIELD_CODES = {
    "none": backend.FIELD_NONE,
    "attractive": backend.FIELD_ATTRACTIVE,
    "repulsive": backend.FIELD_REPULSIVE,
    "time_varying": backend.FIELD_TIME_VARYING,
}


class IntegrationError(RuntimeError):
    """A step produced a non-finite state or derivative."""


def make_state(r, v):
    x = np.empty(STATE_DIM)
    x[:3] = r
    x[3:] = v
    return x


def position(x):
    return x[:3]


def velocity(x):
    return x[3:]


def nominal_derivative(x, u):
    """dx/dt of the unperturbed double integrator: dr = v, dv = u."""
    d = np.empty(STATE_DIM)
    d[:3] = x[3:]
    d[3:] = u
    return d


@dataclass(frozen=True)
class ResidualField:
    """Ground-truth disturbance acting on the velocity channel only.

    kind: one of "none", "attractive", "repulsive", "time_varying";
    k: field gain (1/s^2), >= 0.  The attractive/repulsive fields pull
    toward / push away from the origin with acceleration -+ k*r; the
    time-varying field alternates between the two as k*sin(t)*r.
    """

    kind: str = "none"
    k: float = 0.0

    def __post_init__(self):
        if self.kind not in _FIELD_CODES:
            raise ValueError(f"unknown residual kind {self.kind!r}")
        if self.k < 0:
            raise ValueError("field gain k must be >= 0")

    @property
    def code(self):
        return _FIELD_CODES[self.kind]

    def __call__(self, x, t):
        d = np.zeros(STATE_DIM)
        r = x[:3]
        if self.kind == "attractive":
            d[3:] = -self.k * r
        elif self.kind == "repulsive":
            d[3:] = self.k * r
        elif self.kind == "time_varying":
            d[3:] = self.k * np.sin(t) * r
        return d

    @staticmethod
    def none():
        return ResidualField("none", 0.0)

    @staticmethod
    def attractive(k=0.4):
        return ResidualField("attractive", k)

    @staticmethod
    def repulsive(k=0.4):
        return ResidualField("repulsive", k)

    @staticmethod
    def time_varying(k=1.0):
        return ResidualField("time_varying", k)


def true_residual(field, x, t):
    """Disturbance derivative contribution (position channel is zero)."""
    return field(x, t)


def rk4_step(deriv, x, t, dt):
    """Classical 4-stage Runge-Kutta step of ``deriv(x, t)``.

    Raises IntegrationError if any stage derivative is non-finite.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    k1 = np.asarray(deriv(x, t))
    k2 = np.asarray(deriv(x + 0.5 * dt * k1, t + 0.5 * dt))
    k3 = np.asarray(deriv(x + 0.5 * dt * k2, t + 0.5 * dt))
    k4 = np.asarray(deriv(x + dt * k3, t + dt))
    stages = (k1, k2, k3, k4)
    for k in stages:
        if not np.all(np.isfinite(k)):
            raise IntegrationError(f"non-finite derivative at t={t}")
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def true_step(x, u, field, t, dt):
    """One plant step under nominal dynamics plus the ground-truth field.

    The field is evaluated at the intermediate RK4 stage states/times.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    out = backend.sim_true_step(x, np.asarray(u, dtype=float), t, dt, field.code, field.k)
    if not np.all(np.isfinite(out)):
        raise IntegrationError(f"non-finite state after step at t={t}")
    return out
