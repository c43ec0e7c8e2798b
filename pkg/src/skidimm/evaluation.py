"""Identification and estimation metrics over a filter run."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class RunTrace:
    """Per-step arrays of one run.

    ``angular`` lists the state components that are angles; they are compared
    with a wrapped difference.
    """

    t: np.ndarray
    true_mode: np.ndarray
    dominant: np.ndarray
    mu: np.ndarray
    fused: np.ndarray
    truth: np.ndarray
    likelihoods: np.ndarray | None = None
    state_names: tuple = ()
    angular: tuple = ()

    @property
    def n_modes(self):
        return self.mu.shape[1]


@dataclass(frozen=True)
class RunMetrics:
    latencies: tuple
    accuracy: float
    rmse: tuple
    mean_max_mu: float

    def to_dict(self):
        return asdict(self)


def segments(true_mode):
    """``(start_index, stop_index, mode)`` for each run of constant true mode."""
    true_mode = np.asarray(true_mode)
    cuts = np.flatnonzero(np.diff(true_mode)) + 1
    starts = np.concatenate([[0], cuts])
    stops = np.concatenate([cuts, [len(true_mode)]])
    return [(int(a), int(b), int(true_mode[a])) for a, b in zip(starts, stops)]


def identification_latency(trace: RunTrace, threshold: float = 0.8, dwell: float = 1.0):
    """Time from each segment start until the true mode is held at ``threshold``.

    The true mode's probability must reach ``threshold`` and stay at or above
    it for ``dwell`` seconds inside the same segment. Segments never
    identified give ``None``.
    """
    if not 0.5 < threshold < 1.0:
        raise ValueError("threshold must lie in (0.5, 1)")
    out = []
    for a, b, mode in segments(trace.true_mode):
        t = trace.t[a:b]
        ok = trace.mu[a:b, mode] >= threshold
        latency = None
        # index of the first failing sample at or after each position
        next_bad = np.full(len(ok) + 1, len(ok))
        for i in range(len(ok) - 1, -1, -1):
            next_bad[i] = next_bad[i + 1] if ok[i] else i
        for i in np.flatnonzero(ok):
            end = t[i] + dwell
            if t[-1] < end - _EPS:
                break
            held_until = next_bad[i]
            if held_until == len(ok) or t[held_until] > end + _EPS:
                latency = round(float(t[i] - t[0]), 9)
                break
        out.append(latency)
    return out


def mode_accuracy(trace: RunTrace) -> float:
    return float(np.mean(np.asarray(trace.dominant) == np.asarray(trace.true_mode)))


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi


def state_errors(trace: RunTrace):
    err = np.asarray(trace.fused, dtype=float) - np.asarray(trace.truth, dtype=float)
    for i in trace.angular:
        err[:, i] = wrap_angle(err[:, i])
    return err


def state_rmse(trace: RunTrace):
    """Per-component RMSE of the fused estimate against truth."""
    return np.sqrt(np.mean(state_errors(trace) ** 2, axis=0))


def overall_rmse(trace: RunTrace) -> float:
    """RMSE pooled over all state components."""
    return float(np.sqrt(np.mean(state_errors(trace) ** 2)))


def mean_max_mu(trace: RunTrace) -> float:
    return float(np.mean(np.max(trace.mu, axis=1)))


def evaluate(trace: RunTrace, threshold: float = 0.8, dwell: float = 1.0) -> RunMetrics:
    return RunMetrics(
        latencies=tuple(identification_latency(trace, threshold, dwell)),
        accuracy=mode_accuracy(trace),
        rmse=tuple(float(v) for v in state_rmse(trace)),
        mean_max_mu=mean_max_mu(trace),
    )
