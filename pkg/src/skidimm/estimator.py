"""scikit-learn style wrapper around the IMM mode identifier.

Input rows are time samples at a fixed interval ``dt``::

    [phi_dot_left, phi_dot_right, y_1, ..., y_n]

where ``y`` is the measured state (``V, omega`` for LTC, ``X, Y, theta`` for
STC). A row whose measurement columns are NaN is a prediction-only step. The
wheel speeds of row ``k`` are held over the interval to row ``k + 1``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .filters import Measurement
from .imm import PROBABILITY_UPDATES, TransitionMatrix, init_state
from .models import DEFAULT_GEOMETRY, LTC, STC, WheelCommand, default_ltc_bank, default_stc_bank
from .pipeline import run_filter


class IMMModeEstimator(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Identify the active traction mode of a skid-steer robot.

    Parameters
    ----------
    family : {"LTC", "STC"}
        Model family. Ignored when ``models`` is given.
    models : sequence of LtcModel or StcModel, optional
        Filter bank. Defaults to the built-in bank for ``family``.
    self_probability : float
        Diagonal of the sticky transition matrix. Ignored when ``transition``
        is given.
    transition : array of shape (n_modes, n_modes), optional
    initial_mu : array of shape (n_modes,), optional
        Defaults to uniform.
    dt : float
        Sample interval in seconds.
    probability_update : {"paper", "standard"}
    geometry : RobotGeometry, optional
    x0, P0 : optional
        Initial estimate. Defaults to the first measurement and the first
        model's measurement noise.

    The filter models are fixed in advance, so ``fit`` only validates the
    configuration. ``predict_proba`` returns the mode probability trace,
    ``predict`` the dominant mode per sample and ``transform`` the fused
    state estimates.
    """

    def __init__(
        self,
        family="LTC",
        models=None,
        self_probability=0.97,
        transition=None,
        initial_mu=None,
        dt=0.05,
        probability_update="paper",
        geometry=None,
        x0=None,
        P0=None,
    ):
        self.family = family
        self.models = models
        self.self_probability = self_probability
        self.transition = transition
        self.initial_mu = initial_mu
        self.dt = dt
        self.probability_update = probability_update
        self.geometry = geometry
        self.x0 = x0
        self.P0 = P0

    def fit(self, X=None, y=None):
        geom = DEFAULT_GEOMETRY if self.geometry is None else self.geometry
        if self.models is not None:
            models = tuple(self.models)
        elif self.family == LTC:
            models = default_ltc_bank(geom)
        elif self.family == STC:
            models = default_stc_bank()
        else:
            raise ValueError(f"family must be 'LTC' or 'STC', got {self.family!r}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.probability_update not in PROBABILITY_UPDATES:
            raise ValueError(f"probability_update must be one of {PROBABILITY_UPDATES}")
        n = len(models)
        if self.transition is not None:
            trans = TransitionMatrix(self.transition)
        else:
            trans = TransitionMatrix.sticky(n, self.self_probability)
        mu0 = np.full(n, 1.0 / n) if self.initial_mu is None else np.asarray(self.initial_mu, dtype=float)
        # builds and validates a throwaway state so errors surface at fit time
        dim = models[0].dim
        init_state(models, np.zeros(dim), np.eye(dim), trans, mu0, geom, self.probability_update)
        self.models_ = models
        self.transition_ = trans
        self.initial_mu_ = mu0
        self.geometry_ = geom
        self.state_dim_ = dim
        self.classes_ = np.arange(n)
        self.mode_labels_ = tuple(m.label for m in models)
        self.n_features_in_ = 2 + dim
        if X is not None:
            self._validate(X)
        return self

    def _validate(self, X):
        X = check_array(X, dtype=float, ensure_all_finite="allow-nan")
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} columns, expected {self.n_features_in_}")
        if not np.isfinite(X[:, :2]).all():
            raise ValueError("wheel speed columns must be finite")
        return X

    def _run(self, X):
        check_is_fitted(self, "models_")
        X = self._validate(X)
        n = self.state_dim_
        meas = [None if np.isnan(row[2:]).any() else Measurement(row[2:].copy()) for row in X]
        if self.x0 is None:
            if meas[0] is None:
                raise ValueError("first row needs a measurement when x0 is not given")
            x0 = meas[0].y
        else:
            x0 = np.asarray(self.x0, dtype=float)
        P0 = self.models_[0].R if self.P0 is None else np.asarray(self.P0, dtype=float)
        if x0.shape != (n,) or np.shape(P0) != (n, n):
            raise ValueError("x0/P0 do not match the state dimension")
        state = init_state(self.models_, x0, P0, self.transition_, self.initial_mu_, self.geometry_,
                           self.probability_update)
        cmds = [WheelCommand(float(a), float(b), self.geometry_) for a, b in X[:, :2]]
        return run_filter(state, cmds, meas, self.dt)

    def predict_proba(self, X):
        return self._run(X).mu

    def predict(self, X):
        run = self._run(X)
        return self.classes_[run.dominant]

    def transform(self, X):
        return self._run(X).fused

    def filter(self, X):
        """Full filter output (mode probabilities, fused states and covariances, likelihoods)."""
        return self._run(X)
