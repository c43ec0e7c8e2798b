"""Kalman (LTC) and extended Kalman (STC) predict/update steps.

The measurement model is the identity throughout: every filter observes its
full state vector with additive Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import LTC, LtcModel, ModeModel, RobotGeometry, StcModel, WheelCommand, stc_derivative, stc_jacobian

PRIOR = "prior"
POSTERIOR = "posterior"

LIKELIHOOD_FLOOR = 1e-300
_LOG_FLOOR = np.log(LIKELIHOOD_FLOOR)
_LOG_2PI = np.log(2.0 * np.pi)


class FilterError(ValueError):
    """Raised when a filter step receives invalid numerical input."""


class IllConditionedError(FilterError):
    """The innovation covariance could not be factorized."""


def _sym(P):
    return 0.5 * (P + P.T)


@dataclass(frozen=True, eq=False)
class FilterState:
    """State estimate ``x`` with error covariance ``P``."""

    x: np.ndarray
    P: np.ndarray
    phase: str = POSTERIOR

    @classmethod
    def posterior(cls, x, P):
        return cls(np.asarray(x, dtype=float), np.asarray(P, dtype=float), POSTERIOR)

    @property
    def dim(self):
        return self.x.shape[0]


@dataclass(frozen=True)
class Measurement:
    y: np.ndarray
    timestamp: float = 0.0


@dataclass(frozen=True, eq=False)
class UpdateOutcome:
    posterior: FilterState
    innovation: np.ndarray
    E: np.ndarray
    likelihood: float
    log_likelihood: float


def _check_finite(post: FilterState, dt):
    if post.phase != POSTERIOR:
        raise FilterError("predict expects a posterior state")
    if not dt > 0:
        raise FilterError(f"dt must be positive, got {dt}")
    if not (np.isfinite(post.x).all() and np.isfinite(post.P).all()):
        raise FilterError("non-finite state or covariance")


def kf_predict(post: FilterState, model: LtcModel, cmd: WheelCommand, dt: float) -> FilterState:
    _check_finite(post, dt)
    A = model.A
    x = post.x + (A @ post.x + model.B @ cmd.q) * dt
    Phi = np.eye(2) + A * dt
    P = Phi @ post.P @ Phi.T + model.Q * dt
    return FilterState(x, _sym(P), PRIOR)


def ekf_predict(
    post: FilterState,
    model: StcModel,
    cmd: WheelCommand,
    geom: RobotGeometry | None = None,
    dt: float = 0.05,
) -> FilterState:
    _check_finite(post, dt)
    x = post.x + stc_derivative(post.x, cmd, model, geom) * dt
    Phi = np.eye(3) + stc_jacobian(post.x, cmd, model, geom) * dt
    P = Phi @ post.P @ Phi.T + model.Q * dt
    return FilterState(x, _sym(P), PRIOR)


def predict(post: FilterState, model: ModeModel, cmd: WheelCommand, dt: float, geom=None) -> FilterState:
    """Propagate with KF or EKF depending on the model family."""
    if model.family == LTC:
        return kf_predict(post, model, cmd, dt)
    return ekf_predict(post, model, cmd, geom, dt)


def _factor(E):
    try:
        L = np.linalg.cholesky(E)
    except np.linalg.LinAlgError as exc:
        raise IllConditionedError("innovation covariance is not positive definite") from exc
    d = np.diagonal(L)
    if d.min() <= 1e-150 or not np.isfinite(d).all():
        raise IllConditionedError("innovation covariance is numerically singular")
    Linv = np.linalg.inv(L)
    return Linv, 2.0 * np.log(d).sum()


def _log_density(nu, Linv, logdet):
    z = Linv @ nu
    return -0.5 * (z @ z) - 0.5 * (nu.shape[0] * _LOG_2PI + logdet)


def gaussian_log_likelihood(innovation, E) -> float:
    """Log of the zero-mean Gaussian density of ``innovation`` under covariance ``E``."""
    nu = np.asarray(innovation, dtype=float)
    Linv, logdet = _factor(np.asarray(E, dtype=float))
    return float(_log_density(nu, Linv, logdet))


def gaussian_likelihood(innovation, E, floor: float = LIKELIHOOD_FLOOR) -> float:
    """Gaussian density of the innovation, clamped below at ``floor``."""
    return max(float(np.exp(gaussian_log_likelihood(innovation, E))), floor)


def update(prior: FilterState, meas, R) -> UpdateOutcome:
    """Measurement update with ``H = I`` and a Joseph-form covariance."""
    if prior.phase != PRIOR:
        raise FilterError("update expects a prior state")
    y = meas.y if isinstance(meas, Measurement) else np.asarray(meas, dtype=float)
    if y.shape != prior.x.shape:
        raise FilterError(f"measurement has shape {y.shape}, state has {prior.x.shape}")
    if not np.isfinite(y).all():
        raise FilterError("non-finite measurement")
    P = prior.P
    nu = y - prior.x
    E = P + R
    Linv, logdet = _factor(E)
    Einv = Linv.T @ Linv
    K = P @ Einv
    I_K = np.eye(P.shape[0]) - K
    x = prior.x + K @ nu
    P_post = _sym(I_K @ P @ I_K.T + K @ R @ K.T)
    loglik = float(_log_density(nu, Linv, logdet))
    lik = np.exp(loglik) if loglik > _LOG_FLOOR else LIKELIHOOD_FLOOR
    return UpdateOutcome(FilterState(x, P_post, POSTERIOR), nu, E, max(float(lik), LIKELIHOOD_FLOOR), loglik)


# Stacked variants: the same steps applied to a bank of N filters at once.
# ``X`` has shape (N, n) and ``P`` shape (N, n, n).


_EYE = {n: np.eye(n) for n in (1, 2, 3, 4)}


def _eye(n):
    return _EYE[n] if n in _EYE else np.eye(n)


def _sym_stack(P):
    return 0.5 * (P + P.transpose(0, 2, 1))


def kf_predict_stack(X, P, A, B, Q, q, dt):
    """Stacked :func:`kf_predict`; ``A, B, Q`` have shape (N, 2, 2)."""
    Xp = X + (A @ X[..., None] + B @ q[:, None])[..., 0] * dt
    Phi = _eye(X.shape[1]) + A * dt
    Pp = Phi @ P @ Phi.transpose(0, 2, 1) + Q * dt
    return Xp, _sym_stack(Pp)


def ekf_predict_stack(X, P, k, m, Q, u1, u2, dt):
    """Stacked :func:`ekf_predict`; ``k, m`` have shape (N,)."""
    c, s = np.cos(X[:, 2]), np.sin(X[:, 2])
    kc = k * c * u1
    ks = k * s * u1
    Xp = X.copy()
    Xp[:, 0] += kc * dt
    Xp[:, 1] += ks * dt
    Xp[:, 2] += m * u2 * dt
    Phi = np.zeros_like(P)
    Phi[:, 0, 0] = Phi[:, 1, 1] = Phi[:, 2, 2] = 1.0
    Phi[:, 0, 2] = -ks * dt
    Phi[:, 1, 2] = kc * dt
    Pp = Phi @ P @ Phi.transpose(0, 2, 1) + Q * dt
    return Xp, _sym_stack(Pp)


def update_stack(X, P, y, R):
    """Stacked :func:`update`.

    Returns ``(X_post, P_post, innovations, E, log_likelihoods)``. Raises
    :class:`IllConditionedError` with a ``mode`` attribute naming the first
    bank member whose innovation covariance cannot be factorized.
    """
    nu = y - X
    E = P + R
    try:
        L = np.linalg.cholesky(E)
        d = np.diagonal(L, axis1=1, axis2=2)
        ok = d.min() > 1e-150
    except np.linalg.LinAlgError:
        ok = False
    if not ok:
        for i in range(E.shape[0]):
            try:
                _factor(E[i])
            except IllConditionedError as exc:
                exc.mode = i
                raise
        raise IllConditionedError("innovation covariance is numerically singular")
    Linv = np.linalg.inv(L)
    K = P @ (Linv.transpose(0, 2, 1) @ Linv)
    I_K = _eye(X.shape[1]) - K
    Xp = X + (K @ nu[..., None])[..., 0]
    Pp = _sym_stack(I_K @ P @ I_K.transpose(0, 2, 1) + K @ R @ K.transpose(0, 2, 1))
    z = (Linv @ nu[..., None])[..., 0]
    loglik = -0.5 * (z * z).sum(axis=1) - 0.5 * (X.shape[1] * _LOG_2PI + 2.0 * np.log(d).sum(axis=1))
    return Xp, Pp, nu, E, loglik


def likelihood_from_log(loglik):
    """``exp`` of log-likelihoods, clamped below at :data:`LIKELIHOOD_FLOOR`."""
    loglik = np.asarray(loglik)
    return np.where(loglik > _LOG_FLOOR, np.exp(np.maximum(loglik, _LOG_FLOOR)), LIKELIHOOD_FLOOR)
