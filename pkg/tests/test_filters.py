import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import random_spd
from skidimm.filters import (
    LIKELIHOOD_FLOOR,
    POSTERIOR,
    PRIOR,
    FilterError,
    FilterState,
    IllConditionedError,
    ekf_predict,
    ekf_predict_stack,
    gaussian_likelihood,
    kf_predict,
    kf_predict_stack,
    predict,
    update,
    update_stack,
)
from skidimm.models import (
    LtcModel,
    RobotGeometry,
    StcModel,
    WheelCommand,
    default_ltc_bank,
    stc_derivative,
)


def prior(x, P):
    return FilterState(np.asarray(x, float), np.asarray(P, float), PRIOR)


def post(x, P):
    return FilterState.posterior(x, P)


def zero_ltc():
    Z = np.zeros((2, 2))
    return LtcModel(Z, Z, Z, np.eye(2))


def test_kf_predict_trivial():
    p = post([0.3, -0.2], [[0.5, 0.1], [0.1, 0.2]])
    out = kf_predict(p, zero_ltc(), WheelCommand(1.0, 2.0), 0.05)
    assert out.phase == PRIOR
    np.testing.assert_array_equal(out.x, p.x)
    np.testing.assert_array_equal(out.P, p.P)
    certain = LtcModel(-np.eye(2), np.eye(2), np.zeros((2, 2)), np.eye(2))
    out = kf_predict(post([1.0, 1.0], np.zeros((2, 2))), certain, WheelCommand(1.0, 1.0), 0.05)
    np.testing.assert_array_equal(out.P, np.zeros((2, 2)))


def test_kf_predict_asphalt_matches_matrix_oracle():
    model = default_ltc_bank()[0]
    x, P = [0.45, 0.05], [[0.01, 0.002], [0.002, 0.02]]
    cmd = WheelCommand(3.2, 2.8)
    dt = 0.05
    A, B, Q = model.A.tolist(), model.B.tolist(), model.Q.tolist()
    dx = oracles.matvec(A, x)
    bq = oracles.matvec(B, [3.2, 2.8])
    x_ref = [x[i] + (dx[i] + bq[i]) * dt for i in range(2)]
    Phi = oracles.add(oracles.eye(2), oracles.scale(A, dt))
    P_ref = oracles.add(oracles.matmul(oracles.matmul(Phi, P), oracles.transpose(Phi)), oracles.scale(Q, dt))
    out = kf_predict(post(x, P), model, cmd, dt)
    np.testing.assert_allclose(out.x, x_ref, rtol=1e-14)
    np.testing.assert_allclose(out.P, P_ref, rtol=1e-13)


def stc(k=1.0, m=1.0, Q=None):
    return StcModel(k, m, np.zeros((3, 3)) if Q is None else Q, np.eye(3))


def test_ekf_predict_trivial():
    p = post([1.0, 2.0, 0.3], np.diag([0.1, 0.2, 0.3]))
    stopped = WheelCommand(0.0, 0.0)
    out = ekf_predict(p, stc(0.8, 0.9), stopped, dt=0.1)
    np.testing.assert_array_equal(out.x, p.x)
    np.testing.assert_array_equal(out.P, p.P)


def test_ekf_heading_uncertainty_spreads_into_lateral_position():
    sigma, u1, dt = 0.2, 1.5, 0.05
    cmd = WheelCommand.from_body(u1, 0.0)
    out = ekf_predict(post([0, 0, 0], np.diag([0, 0, sigma**2])), stc(), cmd, dt=dt)
    assert out.P[1, 1] == pytest.approx((u1 * dt * sigma) ** 2, rel=1e-9)
    assert abs(out.P[0, 0]) < 1e-15
    assert out.P[2, 2] == pytest.approx(sigma**2)


def test_ekf_covariance_matches_finite_difference_propagation(rng):
    geom = RobotGeometry()
    model = stc(0.85, 0.9, Q=np.diag([1e-4, 2e-4, 3e-4]))
    dt = 0.05
    for _ in range(20):
        x = rng.normal(size=3)
        P = random_spd(rng, 3, 0.05)
        cmd = WheelCommand(*rng.uniform(-6, 6, 2), geom)

        def step(s):
            return s + stc_derivative(s, cmd, model) * dt

        h = 1e-6
        Phi = np.column_stack([(step(x + h * e) - step(x - h * e)) / (2 * h) for e in np.eye(3)])
        P_fd = Phi @ P @ Phi.T + model.Q * dt
        out = ekf_predict(post(x, P), model, cmd, geom, dt)
        np.testing.assert_allclose(out.x, step(x), rtol=1e-14)
        np.testing.assert_allclose(out.P, P_fd, rtol=1e-6, atol=1e-10)


def test_predict_dispatches_on_family():
    ltc = default_ltc_bank()[1]
    cmd = WheelCommand(1.0, 1.5)
    p = post([0.2, 0.0], np.eye(2) * 0.01)
    np.testing.assert_array_equal(predict(p, ltc, cmd, 0.05).x, kf_predict(p, ltc, cmd, 0.05).x)
    s = post([0.0, 0.0, 0.1], np.eye(3) * 0.01)
    np.testing.assert_array_equal(predict(s, stc(), cmd, 0.05).P, ekf_predict(s, stc(), cmd, dt=0.05).P)


@pytest.mark.parametrize("bad", ["phase", "dt", "nan"])
def test_predict_rejects_bad_input(bad):
    p = post([0.0, 0.0], np.eye(2))
    dt = 0.05
    if bad == "phase":
        p = prior(p.x, p.P)
    elif bad == "dt":
        dt = 0.0
    else:
        p = post([np.nan, 0.0], np.eye(2))
    with pytest.raises(FilterError):
        kf_predict(p, zero_ltc(), WheelCommand(0.0, 0.0), dt)


def test_update_ignores_uninformative_measurement():
    pr = prior([0.5, -0.5], np.eye(2) * 0.3)
    y = np.array([3.0, 2.0])
    out = update(pr, y, np.eye(2) * 1e12)
    nu = y - pr.x
    assert np.max(np.abs(out.posterior.x - pr.x)) < 1e-6 * np.linalg.norm(nu)


def test_update_equal_trust_averages():
    pr = prior([1.0, 2.0, 3.0], np.eye(3))
    d = np.array([0.4, -1.0, 2.0])
    out = update(pr, pr.x + d, np.eye(3))
    np.testing.assert_allclose(out.posterior.x, pr.x + d / 2, rtol=1e-15)
    np.testing.assert_allclose(out.posterior.P, np.eye(3) / 2, rtol=1e-15)
    np.testing.assert_allclose(out.innovation, d)
    np.testing.assert_allclose(out.E, 2 * np.eye(3))
    assert out.posterior.phase == POSTERIOR


@pytest.mark.parametrize("n", [2, 3])
def test_joseph_update_matches_textbook_form(rng, n):
    for _ in range(200):
        P = random_spd(rng, n)
        R = random_spd(rng, n, 0.5)
        x = rng.normal(size=n)
        y = rng.normal(size=n)
        out = update(prior(x, P), y, R)
        xo, Po, nu, E = oracles.kf_update(x.tolist(), P.tolist(), y.tolist(), R.tolist())
        np.testing.assert_allclose(out.posterior.x, xo, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(out.posterior.P, Po, rtol=1e-9, atol=1e-12)
        Pp = out.posterior.P
        assert np.abs(Pp - Pp.T).max() < 1e-9
        assert np.linalg.eigvalsh(Pp).min() >= -1e-9
        # posterior never exceeds prior
        assert np.linalg.eigvalsh(P - Pp).min() >= -1e-9
        assert out.likelihood == pytest.approx(oracles.gaussian_density(nu, E), rel=1e-10)


def test_update_rejects_bad_input():
    with pytest.raises(FilterError):
        update(post([0.0, 0.0], np.eye(2)), [0.0, 0.0], np.eye(2))
    with pytest.raises(FilterError):
        update(prior([0.0, 0.0], np.eye(2)), [0.0, 0.0, 0.0], np.eye(2))
    with pytest.raises(FilterError):
        update(prior([0.0, 0.0], np.eye(2)), [np.inf, 0.0], np.eye(2))
    with pytest.raises(IllConditionedError):
        update(prior([0.0, 0.0], np.zeros((2, 2))), [0.0, 0.0], np.zeros((2, 2)))


def test_covariance_stays_symmetric_psd_over_many_cycles():
    rng = np.random.default_rng(7)
    geom = RobotGeometry()
    ltc = default_ltc_bank(geom)[2]
    s_model = stc(0.9, 0.7, Q=np.diag([1e-4, 1e-4, 1e-4]))
    R2 = np.diag([0.05**2] * 2)
    R3 = np.diag([0.3**2, 0.3**2, 0.05**2])
    a = post([0.0, 0.0], np.eye(2))
    b = post([0.0, 0.0, 0.0], np.eye(3))
    worst_sym = worst_eig = 0.0
    for k in range(10_000):
        cmd = WheelCommand(*rng.uniform(-8, 8, 2), geom)
        a = update(kf_predict(a, ltc, cmd, 0.05), a.x + rng.normal(0, 0.05, 2), R2).posterior
        b = update(ekf_predict(b, s_model, cmd, geom, 0.05), b.x + rng.normal(0, 0.3, 3), R3).posterior
        for P in (a.P, b.P):
            worst_sym = max(worst_sym, np.abs(P - P.T).max())
            worst_eig = min(worst_eig, np.linalg.eigvalsh(P).min())
    assert worst_sym < 1e-9
    assert worst_eig >= -1e-9


def test_likelihood_examples():
    assert gaussian_likelihood(np.zeros(2), np.eye(2)) == pytest.approx(0.15915494309189535, rel=1e-14)
    assert gaussian_likelihood([0.0], [[4.0]]) == pytest.approx(1 / math.sqrt(8 * math.pi), rel=1e-14)
    assert gaussian_likelihood([0.0], [[4.0]]) == pytest.approx(0.19947114020071635, rel=1e-12)
    assert gaussian_likelihood([1e6, 1e6], np.eye(2)) == LIKELIHOOD_FLOOR
    assert gaussian_likelihood([1e6], [[1.0]], floor=1e-200) == 1e-200


def test_likelihood_rejects_non_pd():
    with pytest.raises(IllConditionedError):
        gaussian_likelihood([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])


def test_likelihood_matches_oracle(rng):
    for n in (1, 2, 3):
        for _ in range(300):
            E = random_spd(rng, n, 0.7, 0.05)
            nu = rng.normal(size=n)
            ref = oracles.gaussian_density(nu.tolist(), E.tolist())
            assert gaussian_likelihood(nu, E) == pytest.approx(ref, rel=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 25.0))
def test_likelihood_integrates_to_one(var):
    s = math.sqrt(var)
    grid = np.linspace(-12 * s, 12 * s, 4001)
    vals = np.array([gaussian_likelihood([v], [[var]]) for v in grid])
    assert np.trapezoid(vals, grid) == pytest.approx(1.0, abs=1e-3)


def test_stacked_steps_match_single_filters(rng):
    geom = RobotGeometry()
    ltcs = default_ltc_bank(geom)
    stcs = [stc(0.9, 0.8, np.eye(3) * 1e-4), stc(0.7, 0.75, np.eye(3) * 2e-4)]
    for _ in range(100):
        cmd = WheelCommand(*rng.uniform(-5, 5, 2), geom)
        X = rng.normal(size=(3, 2))
        P = np.stack([random_spd(rng, 2, 0.1) for _ in range(3)])
        Xp, Pp = kf_predict_stack(X, P, np.stack([m.A for m in ltcs]), np.stack([m.B for m in ltcs]),
                                  np.stack([m.Q for m in ltcs]), cmd.q, 0.05)
        R = np.stack([m.R for m in ltcs])
        y = rng.normal(size=2)
        Xu, Pu, nu, E, ll = update_stack(Xp, Pp, y, R)
        for j, m in enumerate(ltcs):
            single = kf_predict(post(X[j], P[j]), m, cmd, 0.05)
            np.testing.assert_allclose(Xp[j], single.x, rtol=1e-12, atol=1e-14)
            np.testing.assert_allclose(Pp[j], single.P, rtol=1e-12, atol=1e-14)
            up = update(single, y, m.R)
            np.testing.assert_allclose(Xu[j], up.posterior.x, rtol=1e-12, atol=1e-14)
            np.testing.assert_allclose(Pu[j], up.posterior.P, rtol=1e-12, atol=1e-14)
            assert ll[j] == pytest.approx(up.log_likelihood, rel=1e-12)

        X = rng.normal(size=(2, 3))
        P = np.stack([random_spd(rng, 3, 0.1) for _ in range(2)])
        Xp, Pp = ekf_predict_stack(X, P, np.array([0.9, 0.7]), np.array([0.8, 0.75]),
                                   np.stack([m.Q for m in stcs]), cmd.u1, cmd.u2, 0.05)
        for j, m in enumerate(stcs):
            single = ekf_predict(post(X[j], P[j]), m, cmd, geom, 0.05)
            np.testing.assert_allclose(Xp[j], single.x, rtol=1e-12, atol=1e-14)
            np.testing.assert_allclose(Pp[j], single.P, rtol=1e-12, atol=1e-14)


def test_update_stack_names_the_failing_member():
    X = np.zeros((3, 2))
    P = np.stack([np.eye(2), -5 * np.eye(2), np.eye(2)])
    with pytest.raises(IllConditionedError) as info:
        update_stack(X, P, np.zeros(2), np.stack([np.eye(2)] * 3))
    assert info.value.mode == 1
