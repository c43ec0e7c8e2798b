"""Ground-truth skid-steer simulation and synthetic IMU/GPS measurements."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .filters import Measurement
from .models import (
    LTC,
    STC,
    LtcModel,
    ModeModel,
    RobotGeometry,
    StcModel,
    WheelCommand,
)

MANEUVERS = ("spiral", "skidpad", "clothoid", "sinusoidal")
_TIME_EPS = 1e-9


class SimulationError(ValueError):
    pass


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent counter-based stream derived from ``seed`` and a stream name.

    Streams are keyed by name, so adding a new consumer never shifts the
    numbers drawn by an existing one.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(name.encode()),))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class ModeSchedule:
    """Ordered ``(start_time_s, mode_index)`` segments, the first starting at 0."""

    segments: tuple

    def __post_init__(self):
        segs = tuple((float(t), int(m)) for t, m in self.segments)
        if not segs or segs[0][0] != 0.0:
            raise SimulationError("schedule must start at t=0")
        starts = [t for t, _ in segs]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise SimulationError("schedule start times must be strictly increasing")
        if any(m < 0 for _, m in segs):
            raise SimulationError("schedule mode indices must be nonnegative")
        object.__setattr__(self, "segments", segs)

    @classmethod
    def constant(cls, mode: int):
        return cls(((0.0, mode),))

    def mode_at(self, t: float) -> int:
        mode = self.segments[0][1]
        for start, m in self.segments:
            if t >= start - _TIME_EPS:
                mode = m
        return mode

    @property
    def max_mode(self):
        return max(m for _, m in self.segments)


@dataclass(frozen=True)
class ManeuverProfile:
    """Commanded motion.

    ``params`` keys by kind (all speeds in body frame):

    * spiral: ``base_speed_mps``, ``initial_radius_m``, ``radius_growth_mps``
    * skidpad: ``base_speed_mps``, ``radius_m``
    * clothoid: ``base_speed_mps``, ``curvature_rate_per_m_s`` (curvature grows linearly from 0)
    * sinusoidal: ``base_speed_mps``, ``yaw_amplitude_rps``, ``frequency_hz``
    """

    kind: str = "spiral"
    params: dict = field(default_factory=lambda: {
        "base_speed_mps": 0.5, "initial_radius_m": 0.5, "radius_growth_mps": 0.1})
    duration: float = 30.0

    def __post_init__(self):
        if self.kind not in MANEUVERS:
            raise SimulationError(f"unknown maneuver kind {self.kind!r}")
        if not self.duration > 0:
            raise SimulationError("maneuver duration must be positive")
        if self.kind == "spiral" and not self.params.get("radius_growth_mps", 0) > 0:
            raise SimulationError("spiral radius growth rate must be positive")

    def body_velocity(self, t: float):
        p = self.params
        u1 = float(p.get("base_speed_mps", 0.5))
        if self.kind == "spiral":
            radius = p.get("initial_radius_m", 0.5) + p["radius_growth_mps"] * t
            if radius <= 0:
                raise SimulationError(f"spiral radius {radius} <= 0 at t={t}")
            return u1, u1 / radius
        if self.kind == "skidpad":
            radius = p["radius_m"]
            if radius <= 0:
                raise SimulationError("skidpad radius must be positive")
            return u1, u1 / radius
        if self.kind == "clothoid":
            return u1, u1 * p["curvature_rate_per_m_s"] * t
        return u1, p["yaw_amplitude_rps"] * np.sin(2.0 * np.pi * p["frequency_hz"] * t)


def spiral_commands(profile: ManeuverProfile, geom: RobotGeometry, t: float) -> WheelCommand:
    """Wheel speeds for an outward spiral with radius ``R0 + rate * t``."""
    if profile.kind != "spiral":
        raise SimulationError("spiral_commands needs a spiral profile")
    return maneuver_commands(profile, geom, t)


def maneuver_commands(profile: ManeuverProfile, geom: RobotGeometry, t: float) -> WheelCommand:
    u1, u2 = profile.body_velocity(t)
    return WheelCommand.from_body(u1, u2, geom)


@dataclass(frozen=True, eq=False)
class SensorConfig:
    noise_cov: np.ndarray
    rate: float = 20.0
    seed: int = 0

    def __post_init__(self):
        c = np.array(self.noise_cov, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or not np.allclose(c, c.T, atol=1e-12):
            raise SimulationError("sensor noise covariance must be a symmetric matrix")
        if np.linalg.eigvalsh(c).min() < -1e-12:
            raise SimulationError("sensor noise covariance must be positive semidefinite")
        if not self.rate > 0:
            raise SimulationError("sensor rate must be positive")
        object.__setattr__(self, "noise_cov", c)


@dataclass(frozen=True, eq=False)
class TruthRecord:
    t: float
    true_mode: int
    cmd: WheelCommand
    vel: np.ndarray
    pose: np.ndarray

    def state(self, family):
        return self.vel if family == LTC else self.pose


def _psd_sqrt(c):
    w, v = np.linalg.eigh(c)
    return v * np.sqrt(np.clip(w, 0.0, None))


def jitter_models(models: Sequence[ModeModel], rel: float, rng: np.random.Generator):
    """Perturb model parameters by a uniform relative factor in ``[-rel, rel]``."""
    if rel == 0:
        return tuple(models)
    out = []
    for m in models:
        if m.family == LTC:
            A = m.A * (1.0 + rng.uniform(-rel, rel, size=(2, 2)))
            B = m.B * (1.0 + rng.uniform(-rel, rel, size=(2, 2)))
            out.append(LtcModel(A, B, m.Q, m.R, m.label))
        else:
            k, mm = np.minimum(np.array([m.k, m.m]) * (1.0 + rng.uniform(-rel, rel, size=2)), 1.0)
            out.append(StcModel(float(k), float(mm), m.Q, m.R, m.label))
    return tuple(out)


def _rates(z, cmd, model):
    """Time derivative of the joint ``[V, omega, X, Y, theta]`` truth state."""
    if model.family == LTC:
        vel = model.A @ z[:2] + model.B @ cmd.q
        V, w = z[0], z[1]
    else:
        vel = np.zeros(2)
        V, w = model.k * cmd.u1, model.m * cmd.u2
    return np.array([vel[0], vel[1], V * np.cos(z[4]), V * np.sin(z[4]), w])


def simulate_truth(
    models: Sequence[ModeModel],
    schedule: ModeSchedule,
    profile: ManeuverProfile,
    geom: RobotGeometry,
    dt: float,
    seed: int = 0,
    process_noise: bool = True,
    substeps: int = 10,
    jitter: float = 0.0,
):
    """Integrate the scheduled true model and return one record per ``dt``.

    Each output interval uses ``substeps`` Heun (trapezoidal) substeps with the
    command held constant. Process noise with covariance ``Q * h`` is added
    after every substep of length ``h``: to the velocity for LTC models and
    to the pose for STC models.
    """
    if not dt > 0:
        raise SimulationError("dt must be positive")
    if schedule.max_mode >= len(models):
        raise SimulationError(f"schedule references mode {schedule.max_mode}, bank has {len(models)}")
    families = {m.family for m in models}
    if len(families) != 1:
        raise SimulationError("true model bank must be homogeneous")
    rng = rng_stream(seed, "truth-noise")
    true_models = jitter_models(models, jitter, rng)
    h = dt / substeps
    sqrtQ = [_psd_sqrt(m.Q * h) for m in true_models]
    n_steps = int(round(profile.duration / dt))
    z = np.zeros(5)
    records = []
    for k in range(n_steps + 1):
        t = k * dt
        mode = schedule.mode_at(t)
        cmd = maneuver_commands(profile, geom, t)
        model = true_models[mode]
        if model.family == STC:
            z[0], z[1] = model.k * cmd.u1, model.m * cmd.u2
        records.append(TruthRecord(t, mode, cmd, z[:2].copy(), z[2:].copy()))
        if k == n_steps:
            break
        for _ in range(substeps):
            d1 = _rates(z, cmd, model)
            d2 = _rates(z + h * d1, cmd, model)
            z = z + 0.5 * h * (d1 + d2)
            if process_noise:
                e = sqrtQ[mode] @ rng.standard_normal(model.dim)
                if model.family == LTC:
                    z[:2] += e
                else:
                    z[2:] += e
    return records


def synthesize_measurements(truth: Sequence[TruthRecord], sensor: SensorConfig, family: str, dt: float | None = None):
    """Noisy identity measurements of the family's state, one per truth record.

    Records between sensor samples get ``None``. LTC measures ``(V, omega)``
    as an IMU would; STC measures ``(X, Y, theta)`` as GPS plus heading.
    """
    if dt is None:
        dt = truth[1].t - truth[0].t if len(truth) > 1 else 1.0 / sensor.rate
    sim_rate = 1.0 / dt
    if sensor.rate > sim_rate * (1 + 1e-9):
        raise SimulationError(f"sensor rate {sensor.rate} Hz exceeds simulation rate {sim_rate:g} Hz")
    every = sim_rate / sensor.rate
    stride = int(round(every))
    if abs(every - stride) > 1e-6:
        raise SimulationError("simulation rate must be an integer multiple of the sensor rate")
    dim = 2 if family == LTC else 3
    if sensor.noise_cov.shape != (dim, dim):
        raise SimulationError(f"{family} sensor noise covariance must be {dim}x{dim}")
    rng = rng_stream(sensor.seed, "sensor-noise")
    root = _psd_sqrt(sensor.noise_cov)
    out = []
    for k, rec in enumerate(truth):
        if k % stride:
            out.append(None)
            continue
        y = rec.state(family) + root @ rng.standard_normal(dim)
        out.append(Measurement(y, rec.t))
    return out
