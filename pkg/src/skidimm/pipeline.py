"""Simulate, filter and evaluate one scenario."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import ScenarioConfig
from .evaluation import RunMetrics, RunTrace, evaluate
from .filters import Measurement
from .imm import ImmState, TransitionMatrix, combine, imm_step, init_state
from .models import LTC
from .sim import simulate_truth, synthesize_measurements

STATE_NAMES = {LTC: ("V", "omega"), "STC": ("X", "Y", "theta")}
ANGULAR = {LTC: (), "STC": (2,)}


@dataclass(frozen=True, eq=False)
class FilterRun:
    t: np.ndarray
    mu: np.ndarray
    dominant: np.ndarray
    fused: np.ndarray
    fused_cov: np.ndarray
    likelihoods: np.ndarray


def initial_estimate(first: Measurement, R):
    """Initialise from the first measurement with its noise as uncertainty."""
    return np.array(first.y, dtype=float), np.array(R, dtype=float)


def run_filter(state: ImmState, commands: Sequence, measurements: Sequence, dt: float, t0: float = 0.0) -> FilterRun:
    """Run the IMM over a sequence.

    ``state`` is the estimate at the first sample. Row ``k > 0`` is produced
    by stepping with ``commands[k - 1]`` (held over the interval) and
    ``measurements[k]`` (``None`` for a prediction-only step). Row 0 echoes
    the initial state; its likelihoods are NaN.
    """
    n_steps = len(measurements)
    N = state.n_modes
    dim = state.bank[0].dim
    mu = np.empty((n_steps, N))
    lik = np.full((n_steps, N), np.nan)
    fused = np.empty((n_steps, dim))
    cov = np.empty((n_steps, dim, dim))
    mu[0] = state.mu
    first = combine(state.bank, state.mu)
    fused[0] = first.x
    cov[0] = first.P
    for k in range(1, n_steps):
        state, out = imm_step(state, commands[k - 1], measurements[k], dt)
        mu[k] = out.mu
        lik[k] = out.likelihoods
        fused[k] = out.fused.x
        cov[k] = out.fused.P
    dominant = np.argmax(mu, axis=1)
    t = t0 + dt * np.arange(n_steps)
    return FilterRun(t, mu, dominant, fused, cov, lik)


@dataclass(frozen=True, eq=False)
class ScenarioResult:
    config: ScenarioConfig
    trace: RunTrace
    metrics: RunMetrics
    truth: list
    measurements: list


def simulate(config: ScenarioConfig):
    truth = simulate_truth(
        config.models,
        config.schedule,
        config.maneuver,
        config.geometry,
        config.dt,
        seed=config.seed,
        process_noise=config.process_noise,
        substeps=config.substeps,
        jitter=config.param_jitter,
    )
    meas = synthesize_measurements(truth, config.sensor, config.family, config.dt)
    return truth, meas


def filter_scenario(config: ScenarioConfig, truth, meas, mode_subset=None) -> RunTrace:
    """Filter simulated data with the configured bank (or a subset of it).

    A one-model subset runs a single plain KF/EKF, which is how the
    single-filter baselines are produced.
    """
    models = config.models
    trans = config.trans
    mu0 = config.mu0
    if mode_subset is not None:
        idx = list(mode_subset)
        models = tuple(models[i] for i in idx)
        p = trans.p[np.ix_(idx, idx)]
        trans = TransitionMatrix(p / p.sum(axis=1, keepdims=True))
        mu0 = np.full(len(idx), 1.0 / len(idx))
    x0, P0 = initial_estimate(meas[0], models[0].R)
    state = init_state(models, x0, P0, trans, mu0, config.geometry, config.probability_update)
    commands = [rec.cmd for rec in truth]
    run = run_filter(state, commands, meas, config.dt)
    true_mode = np.array([rec.true_mode for rec in truth])
    if mode_subset is not None:
        true_mode = np.array([idx.index(m) if m in idx else -1 for m in true_mode])
    return RunTrace(
        t=run.t,
        true_mode=true_mode,
        dominant=run.dominant,
        mu=run.mu,
        fused=run.fused,
        truth=np.stack([rec.state(config.family) for rec in truth]),
        likelihoods=run.likelihoods,
        state_names=STATE_NAMES[config.family],
        angular=ANGULAR[config.family],
    )


def run_scenario(config: ScenarioConfig) -> ScenarioResult:
    truth, meas = simulate(config)
    trace = filter_scenario(config, truth, meas)
    return ScenarioResult(config, trace, evaluate(trace, config.threshold, config.dwell), truth, meas)
