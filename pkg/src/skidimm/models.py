"""Skid-steer motion models.

Two model families are supported:

* LTC (large traction change): a linear velocity model over ``[V, omega]``
  driven directly by the wheel speeds, ``xdot = A x + B q``.
* STC (small traction change): the unicycle pose model over
  ``[X, Y, theta]`` with longitudinal and rotational slip gains ``k`` and
  ``m`` applied to the commanded body velocities.

All functions operate on plain numpy vectors. The ``VelState`` and
``PoseState`` dataclasses are named views for callers that prefer them; any
function taking a state accepts either form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

LTC = "LTC"
STC = "STC"


def _frozen(a, shape=None, name="array"):
    arr = np.array(a, dtype=float)
    if shape is not None and arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    arr.setflags(write=False)
    return arr


def _check_cov(c, name, definite):
    if not np.allclose(c, c.T, rtol=0.0, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    lo = np.linalg.eigvalsh(c).min()
    if definite and lo <= 0.0:
        raise ValueError(f"{name} must be positive definite")
    if lo < -1e-12:
        raise ValueError(f"{name} must be positive semidefinite")


@dataclass(frozen=True)
class RobotGeometry:
    """Wheel radius ``r`` and track width ``b``, both in metres."""

    r: float = 0.165
    b: float = 0.555

    def __post_init__(self):
        if not (self.r > 0 and self.b > 0 and np.isfinite(self.r) and np.isfinite(self.b)):
            raise ValueError(f"geometry must have r > 0 and b > 0, got r={self.r}, b={self.b}")


DEFAULT_GEOMETRY = RobotGeometry()


def wheel_to_body(phi_dot_left, phi_dot_right, geom: RobotGeometry = DEFAULT_GEOMETRY):
    """Map left/right wheel speeds (rad/s) to body speeds ``(u1 [m/s], u2 [rad/s])``."""
    u1 = geom.r * (phi_dot_left + phi_dot_right) / 2.0
    u2 = geom.r * (-phi_dot_left + phi_dot_right) / geom.b
    return u1, u2


def body_to_wheel(u1, u2, geom: RobotGeometry = DEFAULT_GEOMETRY):
    """Inverse of :func:`wheel_to_body`."""
    half = u2 * geom.b / 2.0
    return (u1 - half) / geom.r, (u1 + half) / geom.r


@dataclass(frozen=True)
class WheelCommand:
    """Wheel speed command together with the body velocities it requests."""

    phi_dot_left: float
    phi_dot_right: float
    geometry: RobotGeometry = DEFAULT_GEOMETRY
    u1: float = field(init=False)
    u2: float = field(init=False)

    def __post_init__(self):
        u1, u2 = wheel_to_body(self.phi_dot_left, self.phi_dot_right, self.geometry)
        object.__setattr__(self, "u1", float(u1))
        object.__setattr__(self, "u2", float(u2))

    @property
    def q(self):
        return np.array([self.phi_dot_left, self.phi_dot_right])

    @classmethod
    def from_body(cls, u1, u2, geom: RobotGeometry = DEFAULT_GEOMETRY):
        left, right = body_to_wheel(u1, u2, geom)
        return cls(float(left), float(right), geom)


@dataclass(frozen=True)
class VelState:
    V: float
    omega: float

    def as_array(self):
        return np.array([self.V, self.omega])


@dataclass(frozen=True)
class PoseState:
    """Planar pose. ``theta`` is kept unwrapped."""

    X: float
    Y: float
    theta: float

    def as_array(self):
        return np.array([self.X, self.Y, self.theta])


def _vec(state):
    if hasattr(state, "as_array"):
        return state.as_array()
    return np.asarray(state, dtype=float)


@dataclass(frozen=True, eq=False)
class LtcModel:
    """Linear velocity model ``[Vdot, wdot] = A [V, w] + B [phiL, phiR]``.

    ``Q`` is a continuous-time process noise intensity (it enters the filter
    as ``Q * dt``); ``R`` is the per-sample measurement noise covariance.
    """

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    label: str = ""
    family = LTC
    dim = 2

    def __post_init__(self):
        for name in ("A", "B", "Q", "R"):
            object.__setattr__(self, name, _frozen(getattr(self, name), (2, 2), name))
        _check_cov(self.Q, "Q", definite=False)
        _check_cov(self.R, "R", definite=True)


@dataclass(frozen=True, eq=False)
class StcModel:
    """Slip-scaled unicycle pose model with gains ``0 < k, m <= 1``."""

    k: float
    m: float
    Q: np.ndarray
    R: np.ndarray
    label: str = ""
    family = STC
    dim = 3

    def __post_init__(self):
        if not (0.0 < self.k <= 1.0 and 0.0 < self.m <= 1.0):
            raise ValueError(f"slip gains must lie in (0, 1], got k={self.k}, m={self.m}")
        for name in ("Q", "R"):
            object.__setattr__(self, name, _frozen(getattr(self, name), (3, 3), name))
        _check_cov(self.Q, "Q", definite=False)
        _check_cov(self.R, "R", definite=True)


ModeModel = Union[LtcModel, StcModel]


def ltc_derivative(state, cmd: WheelCommand, model: LtcModel):
    return model.A @ _vec(state) + model.B @ cmd.q


def _body(cmd, geom):
    if geom is None or geom == cmd.geometry:
        return cmd.u1, cmd.u2
    return wheel_to_body(cmd.phi_dot_left, cmd.phi_dot_right, geom)


def stc_derivative(state, cmd: WheelCommand, model: StcModel, geom: RobotGeometry | None = None):
    theta = _vec(state)[2]
    u1, u2 = _body(cmd, geom)
    return np.array([model.k * np.cos(theta) * u1, model.k * np.sin(theta) * u1, model.m * u2])


def stc_jacobian(state, cmd: WheelCommand, model: StcModel, geom: RobotGeometry | None = None):
    """Jacobian of :func:`stc_derivative` with respect to ``[X, Y, theta]``."""
    theta = _vec(state)[2]
    u1, _ = _body(cmd, geom)
    F = np.zeros((3, 3))
    F[0, 2] = -model.k * np.sin(theta) * u1
    F[1, 2] = model.k * np.cos(theta) * u1
    return F


def derivative(state, cmd: WheelCommand, model: ModeModel, geom: RobotGeometry | None = None):
    """Dispatch to the derivative of the model's family."""
    if model.family == LTC:
        return ltc_derivative(state, cmd, model)
    return stc_derivative(state, cmd, model, geom)


def discretize(deriv: Callable, state, cmd, dt: float):
    """One forward-Euler step ``x + deriv(x, cmd) * dt``."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = _vec(state)
    return x + deriv(x, cmd) * dt


# Default model bank. None of these are fitted values; they are chosen to be
# distinguishable and monotone in traction.
LTC_DEFAULTS = {
    # label: (traction factor, lag time constant [s])
    "asphalt": (0.95, 0.15),
    "grass": (0.80, 0.25),
    "crushed_concrete": (0.60, 0.40),
}
STC_DEFAULTS = {
    # label: (k, m)
    "baseline": (1.00, 1.00),
    "front_two_slip": (0.85, 0.90),
    "right_two_slip": (0.90, 0.70),
    "four_wheel_slip": (0.75, 0.75),
}
LTC_DEFAULT_Q = np.diag([1e-3, 1e-3])
LTC_DEFAULT_R = np.diag([0.05**2, 0.05**2])
STC_DEFAULT_Q = np.diag([1e-4, 1e-4, 1e-4])
STC_DEFAULT_R = np.diag([0.3**2, 0.3**2, 0.05**2])


def kinematic_matrix(geom: RobotGeometry = DEFAULT_GEOMETRY):
    """Matrix mapping ``[phiL, phiR]`` to ideal ``[u1, u2]``."""
    return np.array([[geom.r / 2.0, geom.r / 2.0], [-geom.r / geom.b, geom.r / geom.b]])


def ltc_lag_model(traction, tau, geom=DEFAULT_GEOMETRY, Q=None, R=None, label=""):
    """First-order lag towards ``traction`` times the ideal body velocity.

    ``A = -I / tau`` and ``B = traction / tau * K`` so that the steady state
    for a constant command is ``traction * K q``.
    """
    if not (tau > 0 and traction > 0):
        raise ValueError("tau and traction must be positive")
    return LtcModel(
        A=-np.eye(2) / tau,
        B=traction / tau * kinematic_matrix(geom),
        Q=LTC_DEFAULT_Q if Q is None else Q,
        R=LTC_DEFAULT_R if R is None else R,
        label=label,
    )


def default_ltc_bank(geom: RobotGeometry = DEFAULT_GEOMETRY):
    return tuple(ltc_lag_model(t, tau, geom, label=lab) for lab, (t, tau) in LTC_DEFAULTS.items())


def default_stc_bank():
    return tuple(
        StcModel(k=k, m=m, Q=STC_DEFAULT_Q, R=STC_DEFAULT_R, label=lab)
        for lab, (k, m) in STC_DEFAULTS.items()
    )
