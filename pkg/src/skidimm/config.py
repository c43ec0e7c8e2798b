"""Scenario configuration files.

A scenario is a JSON object. Units are carried in field names. Every field
except ``family`` has a default, so the smallest valid file is
``{"family": "LTC"}``. See ``scenarios/*.json`` for complete examples.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .imm import PROBABILITY_UPDATES, TransitionMatrix
from .models import (
    LTC,
    LTC_DEFAULT_Q,
    LTC_DEFAULT_R,
    LTC_DEFAULTS,
    STC,
    STC_DEFAULT_Q,
    STC_DEFAULT_R,
    STC_DEFAULTS,
    LtcModel,
    RobotGeometry,
    StcModel,
    ltc_lag_model,
)
from .sim import MANEUVERS, ManeuverProfile, ModeSchedule, SensorConfig

SCENARIO_PACKAGE = "skidimm.scenarios"

DEFAULT_MANEUVER = {"kind": "spiral", "base_speed_mps": 0.5, "initial_radius_m": 0.5, "radius_growth_mps": 0.1}
MANEUVER_PARAMS = {
    "spiral": ("base_speed_mps", "initial_radius_m", "radius_growth_mps"),
    "skidpad": ("base_speed_mps", "radius_m"),
    "clothoid": ("base_speed_mps", "curvature_rate_per_m_s"),
    "sinusoidal": ("base_speed_mps", "yaw_amplitude_rps", "frequency_hz"),
}


class ConfigError(ValueError):
    """Invalid scenario; ``diagnostics`` lists every problem found."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    name: str
    family: str
    models: tuple
    geometry: RobotGeometry
    trans: TransitionMatrix
    mu0: np.ndarray
    maneuver: ManeuverProfile
    schedule: ModeSchedule
    sensor: SensorConfig
    dt: float
    seed: int
    probability_update: str
    substeps: int
    param_jitter: float
    process_noise: bool
    threshold: float
    dwell: float
    raw: dict

    @property
    def n_modes(self):
        return len(self.models)

    @property
    def labels(self):
        return tuple(m.label for m in self.models)

    def with_overrides(self, seed=None, probability_update=None):
        raw = copy.deepcopy(self.raw)
        if seed is not None:
            raw["seed"] = int(seed)
        if probability_update is not None:
            raw["probability_update"] = probability_update
        return from_dict(raw)


def _matrix(value, shape, where, diags, psd=None):
    try:
        a = np.array(value, dtype=float)
    except (TypeError, ValueError):
        diags.append(f"{where}: not a numeric matrix")
        return None
    if a.shape != shape:
        diags.append(f"{where}: expected shape {list(shape)}, got {list(a.shape)}")
        return None
    if not np.isfinite(a).all():
        diags.append(f"{where}: entries must be finite")
        return None
    if psd:
        if not np.allclose(a, a.T, rtol=0, atol=1e-12):
            diags.append(f"{where}: must be symmetric")
            return None
        lo = np.linalg.eigvalsh(a).min()
        if psd == "pd" and lo <= 0:
            diags.append(f"{where}: must be positive definite")
            return None
        if lo < -1e-12:
            diags.append(f"{where}: must be positive semidefinite")
            return None
    return a


def _number(d, key, where, diags, default=None, positive=False, nonnegative=False):
    v = d.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
        diags.append(f"{where}{key}: must be a finite number")
        return None
    if positive and not v > 0:
        diags.append(f"{where}{key}: must be > 0, got {v}")
        return None
    if nonnegative and v < 0:
        diags.append(f"{where}{key}: must be >= 0, got {v}")
        return None
    return float(v)


def _model(spec, i, family, geom, diags):
    where = f"models[{i}]"
    defaults = LTC_DEFAULTS if family == LTC else STC_DEFAULTS
    if isinstance(spec, str):
        if spec not in defaults:
            diags.append(f"{where}: unknown {family} default model {spec!r}; known: {sorted(defaults)}")
            return None
        spec = {"label": spec}
    if not isinstance(spec, dict):
        diags.append(f"{where}: must be a label string or an object")
        return None
    label = spec.get("label", f"mode{i}")
    dim = 2 if family == LTC else 3
    Q = _matrix(spec.get("Q", LTC_DEFAULT_Q if family == LTC else STC_DEFAULT_Q), (dim, dim), f"{where}.Q", diags, "psd")
    R = _matrix(spec.get("R", LTC_DEFAULT_R if family == LTC else STC_DEFAULT_R), (dim, dim), f"{where}.R", diags, "pd")
    if family == LTC:
        if "A_per_s" in spec or "B" in spec:
            A = _matrix(spec.get("A_per_s"), (2, 2), f"{where}.A_per_s", diags)
            B = _matrix(spec.get("B"), (2, 2), f"{where}.B", diags)
            if A is None or B is None or Q is None or R is None:
                return None
            return LtcModel(A, B, Q, R, label)
        traction, tau = defaults.get(label, (None, None))
        traction = _number(spec, "traction", where + ".", diags, traction, positive=True)
        tau = _number(spec, "tau_s", where + ".", diags, tau, positive=True)
        if any(v is None for v in (traction, tau, Q, R)):
            return None
        return ltc_lag_model(traction, tau, geom, Q, R, label)
    k0, m0 = defaults.get(label, (None, None))
    k = _number(spec, "k", where + ".", diags, k0)
    m = _number(spec, "m", where + ".", diags, m0)
    for name, v in (("k", k), ("m", m)):
        if v is not None and not 0 < v <= 1:
            diags.append(f"{where}.{name}: must lie in (0, 1], got {v}")
            return None
    if any(v is None for v in (k, m, Q, R)):
        return None
    return StcModel(k, m, Q, R, label)


def validate_dict(d) -> list:
    """Every invariant violation in the scenario, as human-readable strings."""
    diags = []
    _build(d, diags)
    return diags


def from_dict(d) -> ScenarioConfig:
    diags = []
    cfg = _build(d, diags)
    if diags:
        raise ConfigError(diags)
    return cfg


def _build(d, diags):
    if not isinstance(d, dict):
        diags.append("top level: must be a JSON object")
        return None
    known = {"name", "family", "dt_s", "duration_s", "seed", "probability_update", "geometry", "models",
             "transition", "initial_mu", "maneuver", "schedule", "sensor", "truth", "identification", "description"}
    for key in sorted(set(d) - known):
        diags.append(f"{key}: unknown field")
    family = d.get("family")
    if family not in (LTC, STC):
        diags.append(f"family: must be 'LTC' or 'STC', got {family!r}")
        return None
    dim = 2 if family == LTC else 3

    dt = _number(d, "dt_s", "", diags, 0.05, positive=True)
    duration = _number(d, "duration_s", "", diags, 30.0, positive=True)
    seed = d.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        diags.append(f"seed: must be an integer in [0, 2**64), got {seed!r}")
        seed = None
    pu = d.get("probability_update", "paper")
    if pu not in PROBABILITY_UPDATES:
        diags.append(f"probability_update: must be one of {list(PROBABILITY_UPDATES)}, got {pu!r}")

    g = d.get("geometry", {})
    geom = None
    if not isinstance(g, dict):
        diags.append("geometry: must be an object")
    else:
        r = _number(g, "wheel_radius_m", "geometry.", diags, 0.165, positive=True)
        b = _number(g, "track_width_m", "geometry.", diags, 0.555, positive=True)
        if r is not None and b is not None:
            geom = RobotGeometry(r, b)
    geom_for_models = geom or RobotGeometry()

    specs = d.get("models", list(LTC_DEFAULTS if family == LTC else STC_DEFAULTS))
    models = []
    if not isinstance(specs, list) or not specs:
        diags.append("models: must be a non-empty list")
    else:
        for i, spec in enumerate(specs):
            models.append(_model(spec, i, family, geom_for_models, diags))
    n = len(models)
    labels = [m.label for m in models if m is not None]
    if len(set(labels)) != len(labels):
        diags.append("models: labels must be unique")

    trans = None
    t = d.get("transition", {"self_probability": 0.97})
    if not isinstance(t, dict):
        diags.append("transition: must be an object")
    elif "matrix" in t:
        p = _matrix(t["matrix"], (n, n), "transition.matrix", diags)
        if p is not None:
            errs = len(diags)
            if (p < 0).any():
                diags.append("transition.matrix: entries must be >= 0")
            for i, s in enumerate(p.sum(axis=1)):
                if abs(s - 1.0) > 1e-12:
                    diags.append(f"transition.matrix[{i}]: row sums to {s:.12g}, expected 1")
            if len(diags) == errs:
                trans = TransitionMatrix(p)
    else:
        stay = _number(t, "self_probability", "transition.", diags, 0.97)
        if stay is not None and not 0 < stay <= 1:
            diags.append(f"transition.self_probability: must lie in (0, 1], got {stay}")
        elif stay is not None and n:
            trans = TransitionMatrix.sticky(n, stay)

    mu0 = None
    if "initial_mu" in d and d["initial_mu"] is not None:
        mu = _matrix(d["initial_mu"], (n,), "initial_mu", diags)
        if mu is not None:
            if (mu < 0).any() or abs(mu.sum() - 1) > 1e-9:
                diags.append("initial_mu: must be nonnegative and sum to 1")
            else:
                mu0 = mu
    elif n:
        mu0 = np.full(n, 1.0 / n)

    maneuver = None
    mv = d.get("maneuver", DEFAULT_MANEUVER)
    if not isinstance(mv, dict) or mv.get("kind") not in MANEUVERS:
        diags.append(f"maneuver.kind: must be one of {list(MANEUVERS)}")
    else:
        kind = mv["kind"]
        params = {}
        for key in MANEUVER_PARAMS[kind]:
            default = DEFAULT_MANEUVER.get(key) if kind == "spiral" or key == "base_speed_mps" else None
            v = _number(mv, key, "maneuver.", diags, default)
            if v is not None:
                params[key] = v
        for key in sorted(set(mv) - set(MANEUVER_PARAMS[kind]) - {"kind"}):
            diags.append(f"maneuver.{key}: unknown field for kind {kind!r}")
        if kind == "spiral" and params.get("radius_growth_mps", 1) <= 0:
            diags.append("maneuver.radius_growth_mps: must be > 0")
        elif kind == "spiral" and params.get("initial_radius_m", 1) <= 0:
            diags.append("maneuver.initial_radius_m: must be > 0")
        elif kind == "skidpad" and params.get("radius_m", 1) <= 0:
            diags.append("maneuver.radius_m: must be > 0")
        elif duration is not None and len(params) == len(MANEUVER_PARAMS[kind]):
            maneuver = ManeuverProfile(kind, params, duration)

    schedule = None
    sch = d.get("schedule", [{"start_s": 0.0, "mode": 0}])
    if not isinstance(sch, list) or not sch:
        diags.append("schedule: must be a non-empty list")
    else:
        segs = []
        for i, seg in enumerate(sch):
            if not isinstance(seg, dict):
                diags.append(f"schedule[{i}]: must be an object")
                continue
            start = _number(seg, "start_s", f"schedule[{i}].", diags, nonnegative=True)
            mode = seg.get("mode")
            if isinstance(mode, str):
                if mode not in labels:
                    diags.append(f"schedule[{i}].mode: unknown mode label {mode!r}")
                    continue
                mode = labels.index(mode)
            if isinstance(mode, bool) or not isinstance(mode, int) or not 0 <= mode < n:
                diags.append(f"schedule[{i}].mode: must be a mode label or an index < {n}, got {mode!r}")
                continue
            if start is not None:
                segs.append((start, mode))
        if len(segs) == len(sch):
            ok = True
            if segs[0][0] != 0.0:
                diags.append("schedule[0].start_s: first segment must start at 0")
                ok = False
            for i in range(1, len(segs)):
                if segs[i][0] <= segs[i - 1][0]:
                    diags.append(f"schedule[{i}].start_s: start times must be strictly increasing")
                    ok = False
            if ok:
                schedule = ModeSchedule(tuple(segs))

    sensor = None
    s = d.get("sensor", {})
    if not isinstance(s, dict):
        diags.append("sensor: must be an object")
    else:
        default_cov = (LTC_DEFAULT_R if family == LTC else STC_DEFAULT_R).tolist()
        cov = _matrix(s.get("noise_cov", default_cov), (dim, dim), "sensor.noise_cov", diags, "psd")
        rate = _number(s, "rate_hz", "sensor.", diags, 20.0, positive=True)
        if rate is not None and dt is not None:
            ratio = 1.0 / (dt * rate)
            if ratio < 1 - 1e-9:
                diags.append(f"sensor.rate_hz: {rate} Hz exceeds the filter rate {1.0 / dt:g} Hz")
            elif abs(ratio - round(ratio)) > 1e-6:
                diags.append("sensor.rate_hz: filter rate must be an integer multiple of the sensor rate")
        if cov is not None and rate is not None and seed is not None:
            sensor = SensorConfig(cov, rate, seed)

    tr = d.get("truth", {})
    substeps, jitter, process_noise = 10, 0.05, True
    if not isinstance(tr, dict):
        diags.append("truth: must be an object")
    else:
        substeps = tr.get("substeps", 10)
        if isinstance(substeps, bool) or not isinstance(substeps, int) or substeps < 1:
            diags.append(f"truth.substeps: must be a positive integer, got {substeps!r}")
        jitter = _number(tr, "param_jitter", "truth.", diags, 0.05, nonnegative=True)
        if jitter is not None and jitter >= 1:
            diags.append("truth.param_jitter: must be < 1")
        process_noise = tr.get("process_noise", True)
        if not isinstance(process_noise, bool):
            diags.append("truth.process_noise: must be true or false")

    ident = d.get("identification", {})
    threshold = dwell = None
    if not isinstance(ident, dict):
        diags.append("identification: must be an object")
    else:
        threshold = _number(ident, "threshold", "identification.", diags, 0.8)
        if threshold is not None and not 0.5 < threshold < 1:
            diags.append(f"identification.threshold: must lie in (0.5, 1), got {threshold}")
        dwell = _number(ident, "dwell_s", "identification.", diags, 1.0, nonnegative=True)

    if diags:
        return None
    return ScenarioConfig(
        name=str(d.get("name", "scenario")),
        family=family,
        models=tuple(models),
        geometry=geom,
        trans=trans,
        mu0=mu0,
        maneuver=maneuver,
        schedule=schedule,
        sensor=sensor,
        dt=dt,
        seed=seed,
        probability_update=pu,
        substeps=substeps,
        param_jitter=jitter,
        process_noise=process_noise,
        threshold=threshold,
        dwell=dwell,
        raw=copy.deepcopy(d),
    )


def list_scenarios():
    """Names of the bundled scenarios, sorted."""
    root = resources.files(SCENARIO_PACKAGE)
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def _read(path_or_name):
    path = Path(path_or_name)
    if path.is_file():
        return json.loads(path.read_text(encoding="utf-8"))
    name = str(path_or_name)
    if name in list_scenarios():
        return json.loads(resources.files(SCENARIO_PACKAGE).joinpath(name + ".json").read_text(encoding="utf-8"))
    raise FileNotFoundError(f"no config file or bundled scenario named {name!r}")


def validate(path_or_name) -> list:
    """Diagnostics for a config file or bundled scenario name (empty when valid)."""
    try:
        d = _read(path_or_name)
    except json.JSONDecodeError as exc:
        return [f"syntax: invalid JSON ({exc})"]
    return validate_dict(d)


def load(path_or_name) -> ScenarioConfig:
    """Load a config file, or a bundled scenario when given its name."""
    return from_dict(_read(path_or_name))
