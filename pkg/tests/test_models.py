from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kspoisson.models import (
    DuffingControlProblem,
    MeasurementOperator,
    ShearFrameParams,
    TrackingScenario,
    VirtualIntensity,
    bearing_range,
    bearing_range_operator,
    circle_truth,
    cv_transition,
    duffing_drift,
    performance_index,
    shear_apply,
    shear_frame_drift,
    shear_frame_truth,
    shear_matrix,
    tracking_process_model,
    tracking_truth,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


# --- tracking ---------------------------------------------------------------


@pytest.mark.parametrize(
    "state, accel, dt, expected",
    [
        ([0, 0, 0, 0], [0, 0], 0.1, [0, 0, 0, 0]),
        ([0, 1, 0, 0], [0, 0], 1.0, [1, 1, 0, 0]),
        ([0, 0, 0, 0], [2, 0], 1.0, [1, 2, 0, 0]),
    ],
)
def test_cv_transition_examples(state, accel, dt, expected):
    np.testing.assert_allclose(cv_transition(np.array(state, float), np.array(accel, float), dt), expected)


def test_cv_transition_rejects_bad_dt():
    with pytest.raises(ValueError):
        cv_transition(np.zeros(4), np.zeros(2), 0.0)


@pytest.mark.parametrize(
    "xy, expected",
    [((1, 0), (0, 1)), ((0, 2), (np.pi / 2, 2)), ((3, 4), (np.arctan2(4, 3), 5))],
)
def test_bearing_range_examples(xy, expected):
    state = np.array([xy[0], 9.0, xy[1], -9.0])
    np.testing.assert_allclose(bearing_range(state), expected, rtol=0, atol=1e-15)


def test_bearing_range_at_origin_is_an_error():
    with pytest.raises(ValueError):
        bearing_range(np.array([2.0, 0, 3.0, 0]), origin=(2.0, 3.0))


def test_bearing_range_operator_is_vectorised():
    op = bearing_range_operator()
    x = np.array([[1.0, 0.0], [0, 0], [0.0, 2.0], [0, 0]])
    np.testing.assert_allclose(op.observe(0.0, x), [[0, np.pi / 2], [1, 2]])


def test_tracking_truth_manoeuvres():
    sc = TrackingScenario()
    dt = 0.1
    t, x = tracking_truth(sc, dt)
    assert x.shape == (4, 1001)
    dv = np.diff(x[[1, 3]], axis=1)
    jumps = np.flatnonzero(np.abs(dv).sum(axis=0) > 0)
    np.testing.assert_array_equal(jumps, [200, 300, 600, 800])
    for k, a in zip(jumps, sc.manoeuvre_accels):
        np.testing.assert_allclose(dv[:, k], np.array(a) * dt)
    # straight-line motion between manoeuvres
    np.testing.assert_allclose(x[:, 1], cv_transition(x[:, 0], np.zeros(2), dt))


def test_tracking_scenario_validation():
    with pytest.raises(ValueError):
        TrackingScenario(manoeuvre_times=(30.0, 20.0, 60.0, 80.0))
    with pytest.raises(ValueError):
        TrackingScenario(horizon=50.0)
    with pytest.raises(ValueError):
        TrackingScenario(manoeuvre_times=(20.0,))


def test_tracking_process_model_step_matches_transition():
    # one EM step with noise dB reproduces Upsilon x + Gamma a for a = sigma dB / sqrt(dt)
    sc = TrackingScenario()
    dt = 0.1
    model = tracking_process_model(sc, dt)
    x = np.array([1.0, 2.0, 3.0, -1.0])
    db = np.array([0.3, -0.2])
    step = x + model.drift(0.0, x) * dt + model.diffusion(0.0, x) @ db
    accel = np.hypot(sc.accel_intensity, sc.manoeuvre_intensity) * db / np.sqrt(dt)
    np.testing.assert_allclose(step, cv_transition(x, accel, dt))


def test_circle_truth_geometry():
    t, x = circle_truth(center=(10.0, -5.0), radius=3.0, period=12.0, horizon=24.0, dt=0.5)
    np.testing.assert_allclose(np.hypot(x[0] - 10, x[2] + 5), 3.0)
    np.testing.assert_allclose(np.hypot(x[1], x[3]), 3.0 * 2 * np.pi / 12)
    np.testing.assert_allclose(x[:, 0], x[:, -1], atol=1e-12)


# --- intensities and operators ---------------------------------------------


def test_measurement_operator_noise_validation():
    with pytest.raises(ValueError):
        MeasurementOperator(2, lambda t, x: x, [0.1, -0.1])


def test_virtual_intensity_requires_positive_alpha():
    op = MeasurementOperator(1, lambda t, x: x, [0.0])
    with pytest.raises(ValueError):
        VirtualIntensity([0.0], op)


@settings(max_examples=50, deadline=None)
@given(arrays(float, (2, 7), elements=finite), st.floats(1e-3, 1e6))
def test_virtual_intensity_non_negative(x, alpha):
    op = MeasurementOperator(2, lambda t, s: np.stack([s[0] - s[1], s[0] * s[1]]), [0.0, 0.0])
    lam = VirtualIntensity([alpha, 2 * alpha], op).rate(0.0, x)
    assert lam.shape == (2, 7)
    assert np.all(lam >= 0)


# --- shear frame --------------------------------------------------------------


def test_shear_matrix_pattern():
    k = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    m = shear_matrix(k)
    np.testing.assert_array_equal(m, m.T)
    k_next = np.append(k[1:], 0.0)
    np.testing.assert_array_equal(np.diag(m), k + k_next)
    np.testing.assert_array_equal(np.diag(m, 1), -k[1:])
    assert not np.triu(m, 2).any()


@settings(max_examples=40, deadline=None)
@given(arrays(float, 5, elements=st.floats(0.1, 200)), arrays(float, (5, 3), elements=finite))
def test_shear_apply_matches_matrix(coeffs, v):
    np.testing.assert_allclose(shear_apply(coeffs[:, None], v), shear_matrix(coeffs) @ v, rtol=1e-12, atol=1e-9)


def test_shear_drift_examples():
    p = ShearFrameParams(f0=0.0)
    aug = np.concatenate([np.zeros(10), p.k_true, p.c_true])
    np.testing.assert_array_equal(shear_frame_drift(aug, 0.3, p), np.zeros(20))

    p = ShearFrameParams()
    drift = shear_frame_drift(aug, 0.0, p)
    np.testing.assert_allclose(drift[5:10], np.full(5, p.f0))
    assert not drift[:5].any() and not drift[10:].any()

    single = ShearFrameParams(n_floors=1, k_true=[100.0], c_true=[5.0], f0=0.0)
    np.testing.assert_allclose(shear_frame_drift(np.array([1.0, 0.0, 100.0, 5.0]), 0.0, single), [0, -100, 0, 0])


def test_shear_params_validation():
    with pytest.raises(ValueError):
        ShearFrameParams(k_true=np.array([100.0, 100, -1, 100, 100]))


def test_shear_truth_at_rest_without_excitation():
    p = ShearFrameParams(f0=0.0, sigma_diag=0.0)
    out = shear_frame_truth(p, 0.01, 200, noise=np.random.default_rng(0).standard_normal((5, 200)))
    assert not out.any()


def test_shear_truth_matches_matrix_form():
    p = ShearFrameParams(k_true=np.linspace(80, 120, 5), c_true=np.linspace(3, 7, 5))
    dt, n = 0.01, 50
    out = shear_frame_truth(p, dt, n)
    k, c = shear_matrix(p.k_true), shear_matrix(p.c_true)
    x, v = np.zeros(5), np.zeros(5)
    for i in range(n):
        x, v = x + v * dt, v + (p.forcing(i * dt) - c @ v - k @ x) * dt
    np.testing.assert_allclose(out[:, -1], np.concatenate([x, v]), rtol=1e-10, atol=1e-14)


# --- Duffing ----------------------------------------------------------------


def _quiet(**kw):
    return DuffingControlProblem(f0=0.0, xg0=0.0, **kw)


def test_duffing_drift_examples():
    np.testing.assert_array_equal(duffing_drift(np.zeros(2), 0.0, 0.7, _quiet()), [0, 0])
    np.testing.assert_allclose(duffing_drift(np.array([1.0, 0.0]), 0.0, 0.0, _quiet()), [0, -100])
    np.testing.assert_allclose(duffing_drift(np.array([1.0, 0.0]), 0.0, 0.0, _quiet(d=2.0)), [0, -102])


def test_base_acceleration_is_second_derivative():
    p = DuffingControlProblem()
    t, h = 0.37, 1e-4
    xg = lambda s: p.xg0 * np.sin(p.omega_g * s)  # noqa: E731
    numeric = (xg(t + h) - 2 * xg(t) + xg(t - h)) / h**2
    assert p.base_acceleration(t) == pytest.approx(numeric, rel=1e-6)


@settings(max_examples=50, deadline=None)
@given(arrays(float, 2, elements=finite), st.floats(-1e3, 1e3), st.floats(0, 10))
def test_duffing_drift_affine_in_control(x, u, t):
    p = DuffingControlProblem(d=3.0)
    base = duffing_drift(x, 0.0, t, p)
    diff = duffing_drift(x, u, t, p) - base
    assert diff[0] == 0.0
    # cancellation error scales with the size of the restoring force
    assert diff[1] == pytest.approx(u, abs=1e-14 * (abs(base[1]) + abs(u)) + 1e-12)


def test_performance_index_examples():
    assert performance_index(np.zeros(2), 0.0, np.eye(2), 0.0) == 0.0
    assert performance_index(np.array([3.0, 4.0]), 0.0, np.eye(2), 0.0) == pytest.approx(25.0)
    assert performance_index(np.array([1.0, 1.0]), 2.0, np.diag([2.0, 1.0]), 3.0) == pytest.approx(15.0)


@settings(max_examples=50, deadline=None)
@given(arrays(float, (2, 2), elements=st.floats(-5, 5)), arrays(float, (2, 6), elements=finite), st.floats(0, 10))
def test_performance_index_non_negative(a, x, s):
    r = a @ a.T
    u = np.linspace(-3, 3, 6)
    assert np.all(performance_index(x, u, r, s) >= -1e-9 * (1 + np.abs(x).max() ** 2))


def test_duffing_problem_validation():
    with pytest.raises(ValueError):
        DuffingControlProblem(weight_R=np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        DuffingControlProblem(weight_R=-np.eye(2))
    with pytest.raises(ValueError):
        DuffingControlProblem(weight_S=-1.0)
    with pytest.raises(ValueError):
        DuffingControlProblem(inner_iterations=0)
