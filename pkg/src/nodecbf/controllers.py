"""Constraint assembly and control synthesis.

Three controller families share one machinery: the residual-aware
second-order barrier constraint is assembled from a residual estimate
d(x) and its state Jacobian, then a QP picks the control closest to the
PID's desired control.  The plain high-order CBF is the zero-residual
special case; the concurrent-learning adaptive baseline supplies a
parametric residual Y(x) @ theta instead of the neural one.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .qp import qp_solve, least_violating_control
from .residual import net_value_and_jacobian


@dataclass(frozen=True)
class Obstacle:
    center: np.ndarray
    safety_radius: float

    def __post_init__(self):
        object.__setattr__(
            self, "center", np.asarray(self.center, dtype=float).reshape(3)
        )
        if self.safety_radius <= 0:
            raise ValueError("safety_radius must be > 0")


@dataclass(frozen=True)
class CbfGains:
    gamma1: float = 2.0
    gamma2: float = 2.0

    def __post_init__(self):
        if self.gamma1 <= 0 or self.gamma2 <= 0:
            raise ValueError("gains must be > 0")


class ReferencePoint(NamedTuple):
    r_des: np.ndarray
    v_des: np.ndarray
    a_des: np.ndarray


class SafetyConstraint(NamedTuple):
    """Affine-in-control inequality a . u >= b."""

    a: np.ndarray
    b: float


class FilterResult(NamedTuple):
    u: np.ndarray
    margin: float  # min over constraints of a.u - b at the returned u
    infeasible: bool


def reference_circle(t, radius=2.0, height=1.0, omega=0.5):
    """Circular reference with exact velocity/acceleration derivatives."""
    if radius <= 0:
        raise ValueError("radius must be > 0")
    c, s = np.cos(omega * t), np.sin(omega * t)
    r_des = np.array([radius * c, radius * s, height])
    v_des = np.array([-radius * omega * s, radius * omega * c, 0.0])
    a_des = np.array([-radius * omega**2 * c, -radius * omega**2 * s, 0.0])
    return ReferencePoint(r_des, v_des, a_des)


def pid_desired_control(x, ref, kp=6.0, kd=4.0):
    return ref.a_des + kp * (ref.r_des - x[:3]) + kd * (ref.v_des - x[3:])


def cbf_value(x, obs):
    """h(x) = |r - center|^2 - safety_radius^2."""
    e = x[:3] - obs.center
    return float(e @ e - obs.safety_radius**2)


def assemble_constraint(x, obs, gains, d_hat, jac, margin=0.0):
    """Second-order barrier constraint for the residual-aware model.

    d_hat is the residual estimate (6,) at x and jac its 6x6 state
    Jacobian (both zero for the residual-free baseline).  Returns
    SafetyConstraint(a, b) meaning a . u >= b.  margin tightens the
    constraint to psi2 >= margin, buffering the zero-order-hold
    discretization of the control; the continuous-time condition is
    margin = 0.
    """
    e = x[:3] - obs.center
    v = x[3:]
    d_r = d_hat[:3]
    d_v = d_hat[3:]
    j_rr = jac[:3, :3]
    j_rv = jac[:3, 3:]

    h = e @ e - obs.safety_radius**2
    psi1 = 2.0 * e @ v + 2.0 * e @ d_r + gains.gamma1 * h
    # gradient of psi1 split into position/velocity blocks
    grad_r = 2.0 * (v + d_r + j_rr.T @ e + gains.gamma1 * e)
    grad_v = 2.0 * (e + j_rv.T @ e)
    drift = grad_r @ (v + d_r) + grad_v @ d_v
    a = grad_v
    b = margin - (drift + gains.gamma2 * psi1)
    return SafetyConstraint(a, float(b))


def filter_control(u_des, constraints):
    """Minimally modify u_des to satisfy the constraints; on an
    infeasible set fall back to the least-violating control."""
    sol = qp_solve(u_des, constraints)
    if sol.optimal:
        u = sol.u
        infeasible = False
    else:
        u, _ = least_violating_control(u_des, constraints)
        infeasible = True
    if constraints:
        margin = min(c.a @ u - c.b for c in constraints)
    else:
        margin = np.inf
    return FilterResult(u, float(margin), infeasible)


def constraints_for_net(x, obstacles, gains, net, margin=0.0):
    if net is None:
        d_hat = np.zeros(6)
        jac = np.zeros((6, 6))
    else:
        d_hat, jac = net_value_and_jacobian(net, x)
    return [
        assemble_constraint(x, o, gains, d_hat, jac, margin) for o in obstacles
    ]


def nodehoacbf_control(
    x, t, obstacles, gains, net, u_des, extra_constraints=(), margin=0.0
):
    """Safety-filtered control using the neural residual model (pass
    net=None or a zero network for the plain HOCBF baseline)."""
    del t  # constraint is time-invariant; kept for a uniform signature
    constraints = constraints_for_net(x, obstacles, gains, net, margin)
    constraints.extend(extra_constraints)
    return filter_control(u_des, constraints)


def hocbf_control(x, t, obstacles, gains, u_des, extra_constraints=(), margin=0.0):
    return nodehoacbf_control(
        x, t, obstacles, gains, None, u_des, extra_constraints, margin
    )


# --- concurrent-learning adaptive baseline ---------------------------------

_Y_KINDS = ("state", "const", "state_pos", "const_pos")


def knowledge_matrix(kind, x):
    """Regressor Y(x) with zero top block; the velocity block is
    diagonal in the position coordinates ("state") or constant
    ("const"); *_pos are the sign-flipped variants."""
    if kind not in _Y_KINDS:
        raise ValueError(f"unknown knowledge matrix kind {kind!r}")
    y = np.zeros((6, 3))
    r = x[:3]
    if kind == "state":
        y[3, 0] = -r[0]
        y[4, 1] = -r[1]
        y[5, 2] = -(r[2] - 1.0)
    elif kind == "state_pos":
        y[3, 0] = r[0]
        y[4, 1] = r[1]
        y[5, 2] = r[2]
    elif kind == "const":
        y[3:, :] = -np.eye(3)
    else:
        y[3:, :] = np.eye(3)
    return y


def _regressor_diag(kind, rs):
    """Diagonal of the velocity block of Y for a batch of positions."""
    if kind == "state":
        d = -np.column_stack([rs[:, 0], rs[:, 1], rs[:, 2] - 1.0])
    elif kind == "state_pos":
        d = rs.copy()
    elif kind == "const":
        d = -np.ones((rs.shape[0], 3))
    elif kind == "const_pos":
        d = np.ones((rs.shape[0], 3))
    else:
        raise ValueError(f"unknown knowledge matrix kind {kind!r}")
    return d


@dataclass(frozen=True)
class AdaptiveEstimate:
    theta: np.ndarray = field(default_factory=lambda: np.zeros(3))
    lo: np.ndarray = field(default_factory=lambda: np.full(3, -4.0))
    hi: np.ndarray = field(default_factory=lambda: np.full(3, 4.0))

    def __post_init__(self):
        theta = np.clip(np.asarray(self.theta, dtype=float).reshape(3),
                        self.lo, self.hi)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float).reshape(3))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float).reshape(3))

    def clamped(self, theta):
        return AdaptiveEstimate(np.clip(theta, self.lo, self.hi), self.lo, self.hi)


def parametric_residual(kind, theta, x):
    """Residual Y(x) @ theta and its analytic state Jacobian."""
    y = knowledge_matrix(kind, x)
    d_hat = y @ theta
    jac = np.zeros((6, 6))
    if kind == "state":
        jac[3, 0] = -theta[0]
        jac[4, 1] = -theta[1]
        jac[5, 2] = -theta[2]
    elif kind == "state_pos":
        jac[3, 0] = theta[0]
        jac[4, 1] = theta[1]
        jac[5, 2] = theta[2]
    return d_hat, jac


def hoacbf_update(est, hist_t, hist_x, hist_u, kind, kappa, gamma, dt):
    """Concurrent-learning update over a history stack.

    State derivatives come from central finite differences over the
    stack; the accumulated regressor-weighted prediction error drives
    theta through the gains kappa * Gamma, then the estimate is clamped
    to its bounds.  Fewer than 3 samples leave the estimate unchanged.
    """
    n = len(hist_t)
    if n < 3:
        return est
    ts = np.asarray(hist_t)
    xs = np.asarray(hist_x)
    us = np.asarray(hist_u)
    denom = (ts[2:] - ts[:-2]).reshape(-1, 1)
    xdot = (xs[2:] - xs[:-2]) / denom
    xm = xs[1:-1]
    um = us[1:-1]
    # nominal model prediction error; Y^T kills the position channel
    w = _regressor_diag(kind, xm[:, :3])
    eps_v = xdot[:, 3:] - um - w * est.theta
    total = (w * eps_v).sum(axis=0)
    gamma = np.asarray(gamma, dtype=float)
    if gamma.ndim == 0:
        step = float(gamma) * total
    else:
        step = gamma @ total
    return est.clamped(est.theta + dt * kappa * step)


def hoacbf_control(
    x, t, obstacles, gains, est, kind, u_des, extra_constraints=(), margin=0.0
):
    """Safety filter with the parametric residual substituted in."""
    del t
    d_hat, jac = parametric_residual(kind, est.theta, x)
    constraints = [
        assemble_constraint(x, o, gains, d_hat, jac, margin) for o in obstacles
    ]
    constraints.extend(extra_constraints)
    return filter_control(u_des, constraints)
