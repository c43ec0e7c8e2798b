"""Interacting multiple model estimation over a homogeneous filter bank.

One call to :func:`imm_step` runs the full cycle: mixing probabilities,
mixed moments, model-matched KF/EKF filtering, the mode probability update
and the combined estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .filters import (
    LIKELIHOOD_FLOOR,
    POSTERIOR,
    FilterError,
    FilterState,
    IllConditionedError,
    Measurement,
    UpdateOutcome,
    _sym,
    _sym_stack,
    ekf_predict_stack,
    kf_predict_stack,
    likelihood_from_log,
    update_stack,
)
from .models import LTC, ModeModel, RobotGeometry, WheelCommand

MU_FLOOR = 1e-12
PAPER = "paper"
STANDARD = "standard"
PROBABILITY_UPDATES = (PAPER, STANDARD)


class IMMError(ValueError):
    pass


class ModeFilterError(IMMError):
    """A model-matched filter failed; ``mode`` is the bank index."""

    def __init__(self, mode, cause):
        super().__init__(f"mode {mode}: {cause}")
        self.mode = mode


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Row-stochastic Markov matrix, ``p[i, j] = P(mode i -> mode j)``."""

    p: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise IMMError(f"transition matrix must be square, got shape {p.shape}")
        if not np.isfinite(p).all() or (p < 0).any():
            raise IMMError("transition matrix entries must be finite and nonnegative")
        bad = np.flatnonzero(np.abs(p.sum(axis=1) - 1.0) > 1e-12)
        if bad.size:
            raise IMMError(f"transition matrix row {int(bad[0])} sums to {p[bad[0]].sum():.12g}, expected 1")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    @property
    def n(self):
        return self.p.shape[0]

    @classmethod
    def sticky(cls, n: int, stay: float = 0.97):
        """Self-transition ``stay``; the rest split evenly over the other modes."""
        if n == 1:
            return cls(np.ones((1, 1)))
        p = np.full((n, n), (1.0 - stay) / (n - 1))
        np.fill_diagonal(p, stay)
        # exact row sums despite rounding of the off-diagonal share
        p[np.arange(n), np.arange(n)] = 1.0 - (p.sum(axis=1) - stay)
        return cls(p)


def check_probabilities(mu, n=None):
    mu = np.asarray(mu, dtype=float)
    if mu.ndim != 1 or (n is not None and mu.shape[0] != n):
        raise IMMError(f"mode probabilities must be a length-{n} vector")
    if not np.isfinite(mu).all() or (mu < 0).any() or abs(mu.sum() - 1.0) > 1e-9:
        raise IMMError("mode probabilities must be nonnegative and sum to 1")
    return mu


class _BankParams:
    """Model parameters stacked along a leading mode axis."""

    def __init__(self, models):
        self.family = models[0].family
        self.Q = np.stack([m.Q for m in models])
        self.R = np.stack([m.R for m in models])
        if self.family == LTC:
            self.A = np.stack([m.A for m in models])
            self.B = np.stack([m.B for m in models])
        else:
            self.k = np.array([m.k for m in models])
            self.m = np.array([m.m for m in models])


@dataclass(frozen=True, eq=False)
class ImmState:
    """Bank posteriors as stacked arrays ``X`` (N, n) and ``P`` (N, n, n)."""

    X: np.ndarray
    P: np.ndarray
    mu: np.ndarray
    trans: TransitionMatrix
    models: tuple
    geometry: RobotGeometry | None = None
    probability_update: str = PAPER
    _params: _BankParams | None = field(default=None, repr=False)

    def __post_init__(self):
        models = tuple(self.models)
        n = len(models)
        X = np.array(self.X, dtype=float)
        P = np.array(self.P, dtype=float)
        if n == 0 or not (X.shape[0] == P.shape[0] == n == self.trans.n):
            raise IMMError("bank, models and transition matrix sizes disagree")
        families = {m.family for m in models}
        if len(families) != 1:
            raise IMMError("model bank must be homogeneous (all LTC or all STC)")
        dims = {X.shape[1], P.shape[1], P.shape[2]} | {m.dim for m in models}
        if X.ndim != 2 or P.ndim != 3 or len(dims) != 1:
            raise IMMError("bank states and models must share one state dimension")
        if self.probability_update not in PROBABILITY_UPDATES:
            raise IMMError(f"probability_update must be one of {PROBABILITY_UPDATES}")
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "mu", check_probabilities(self.mu, n))
        if self._params is None:
            object.__setattr__(self, "_params", _BankParams(models))

    @classmethod
    def from_bank(cls, bank: Sequence[FilterState], mu, trans, models, geometry=None, probability_update=PAPER):
        return cls(np.stack([s.x for s in bank]), np.stack([s.P for s in bank]), mu, trans, models,
                   geometry, probability_update)

    def _evolve(self, X, P, mu):
        # internal fast path; the inputs come from a validated step
        new = object.__new__(ImmState)
        for name in ("trans", "models", "geometry", "probability_update", "_params"):
            object.__setattr__(new, name, getattr(self, name))
        object.__setattr__(new, "X", X)
        object.__setattr__(new, "P", P)
        object.__setattr__(new, "mu", mu)
        return new

    @property
    def bank(self):
        return tuple(FilterState(x, p, POSTERIOR) for x, p in zip(self.X, self.P))

    @property
    def n_modes(self):
        return len(self.models)

    @property
    def family(self):
        return self.models[0].family


@dataclass(frozen=True, eq=False)
class ImmOutput:
    fused: FilterState
    mu: np.ndarray
    dominant: int
    likelihoods: np.ndarray
    log_likelihoods: np.ndarray = field(default=None, repr=False)
    mixed_P: np.ndarray = field(default=None, repr=False)


def init_state(models: Sequence[ModeModel], x0, P0, trans=None, mu0=None, geometry=None, probability_update=PAPER):
    """Start every bank member from the same ``(x0, P0)``."""
    models = tuple(models)
    n = len(models)
    if trans is None:
        trans = TransitionMatrix.sticky(n)
    elif not isinstance(trans, TransitionMatrix):
        trans = TransitionMatrix(trans)
    if mu0 is None:
        mu0 = np.full(n, 1.0 / n)
    else:
        # same floor as after every update, so one-hot priors cannot zero a normalizer
        mu0 = check_probabilities(mu0, n)
        mu0 = np.maximum(mu0, MU_FLOOR)
        mu0 = mu0 / mu0.sum()
    x0 = np.asarray(x0, dtype=float)
    P0 = np.asarray(P0, dtype=float)
    X = np.tile(x0, (n, 1))
    P = np.tile(P0, (n, 1, 1))
    return ImmState(X, P, mu0, trans, models, geometry, probability_update)


def mixing_probabilities(mu_prev, trans):
    """Return ``(mix, c)`` with ``mix[i, j] = p_ij mu_i / c_j``."""
    p = trans.p if isinstance(trans, TransitionMatrix) else np.asarray(trans)
    weighted = p * np.asarray(mu_prev)[:, None]
    c = weighted.sum(axis=0)
    if (c <= 0).any():
        raise IMMError(f"mixing normalizer is zero for mode {int(np.argmin(c))}")
    return weighted / c, c


def _mix_arrays(X, P, mix):
    X0 = mix.T @ X
    D = X[None, :, :] - X0[:, None, :]
    P0 = np.einsum("ij,iab->jab", mix, P) + np.einsum("ij,jia,jib->jab", mix, D, D)
    return X0, _sym_stack(P0)


def mix_moments(bank: Sequence[FilterState], mix):
    """Mixed initial conditions ``(x0j, P0j)`` for every model-matched filter."""
    X0, P0 = _mix_arrays(np.stack([s.x for s in bank]), np.stack([s.P for s in bank]), np.asarray(mix))
    return [FilterState(x, p, POSTERIOR) for x, p in zip(X0, P0)]


def _bank_arrays(X, P, params, cmd, meas, dt):
    if not dt > 0:
        raise FilterError(f"dt must be positive, got {dt}")
    if params.family == LTC:
        Xp, Pp = kf_predict_stack(X, P, params.A, params.B, params.Q, cmd.q, dt)
    else:
        Xp, Pp = ekf_predict_stack(X, P, params.k, params.m, params.Q, cmd.u1, cmd.u2, dt)
    if not np.isfinite(Xp.sum() + Pp.sum()):
        mode = int(np.flatnonzero(~(np.isfinite(Xp).all(axis=1) & np.isfinite(Pp).all(axis=(1, 2))))[0])
        raise ModeFilterError(mode, "non-finite predicted state or covariance")
    if meas is None:
        return Xp, Pp, np.zeros_like(Xp), Pp, np.zeros(X.shape[0])
    y = meas.y if isinstance(meas, Measurement) else np.asarray(meas, dtype=float)
    if y.shape != (X.shape[1],) or not np.isfinite(y.sum()):
        raise FilterError(f"measurement must be a finite vector of length {X.shape[1]}")
    try:
        return update_stack(Xp, Pp, y, params.R)
    except IllConditionedError as exc:
        raise ModeFilterError(getattr(exc, "mode", -1), exc) from exc


def bank_step(mixed: Sequence[FilterState], cmd: WheelCommand, meas, models, dt):
    """Predict and update each model-matched filter.

    Returns one :class:`UpdateOutcome` per model. With ``meas=None`` only the
    prediction runs and every likelihood is 1.
    """
    X = np.stack([s.x for s in mixed])
    P = np.stack([s.P for s in mixed])
    if not (np.isfinite(X).all() and np.isfinite(P).all()):
        raise FilterError("non-finite state or covariance")
    Xp, Pp, nu, E, loglik = _bank_arrays(X, P, _BankParams(tuple(models)), cmd, meas, dt)
    lik = likelihood_from_log(loglik)
    return [
        UpdateOutcome(FilterState(Xp[j], Pp[j], POSTERIOR), nu[j], E[j], float(lik[j]), float(loglik[j]))
        for j in range(len(models))
    ]


def update_mode_probabilities(mu_prev, likelihoods, c=None, floor=MU_FLOOR):
    """Bayes update of the mode probabilities.

    Weights are ``mu_prev`` as written for this estimator. Passing the mixing
    normalizers ``c`` instead gives the textbook IMM update.
    """
    prior = np.asarray(mu_prev if c is None else c, dtype=float)
    lik = np.maximum(np.asarray(likelihoods, dtype=float), LIKELIHOOD_FLOOR)
    w = lik * prior
    total = w.sum()
    if not total > 0:
        # products of floored likelihoods and floored weights can underflow
        logw = np.log(lik) + np.log(np.maximum(prior, LIKELIHOOD_FLOOR))
        w = np.exp(logw - logw.max())
        total = w.sum()
    mu = w / total
    if floor and mu.min() < floor:
        mu = np.maximum(mu, floor)
        mu = mu / mu.sum()
    return mu


def _combine_arrays(X, P, mu):
    x = mu @ X
    D = X - x
    Pc = np.einsum("i,iab->ab", mu, P) + (D.T * mu) @ D
    return x, _sym(Pc)


def combine(posteriors: Sequence[FilterState], mu):
    """Probability-weighted fusion of the bank posteriors."""
    x, P = _combine_arrays(np.stack([s.x for s in posteriors]), np.stack([s.P for s in posteriors]), np.asarray(mu))
    return FilterState(x, P, POSTERIOR)


def dominant_mode(mu) -> int:
    # np.argmax returns the first maximal index
    return int(np.argmax(mu))


def imm_step(state: ImmState, cmd: WheelCommand, meas, dt: float):
    """Advance the IMM one step; returns ``(new_state, output)``.

    ``meas=None`` runs a prediction-only step.
    """
    mix, c = mixing_probabilities(state.mu, state.trans)
    X0, P0 = _mix_arrays(state.X, state.P, mix)
    X, P, _, _, loglik = _bank_arrays(X0, P0, state._params, cmd, meas, dt)
    lik = likelihood_from_log(loglik)
    if state.probability_update == STANDARD:
        mu = update_mode_probabilities(state.mu, lik, c=c)
    else:
        mu = update_mode_probabilities(state.mu, lik)
    x, Pf = _combine_arrays(X, P, mu)
    out = ImmOutput(FilterState(x, Pf, POSTERIOR), mu, dominant_mode(mu), lik, loglik, P0)
    return state._evolve(X, P, mu), out
