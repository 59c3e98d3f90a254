import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pulsedom import kernels
from pulsedom.dynamics import OscillatorParams, segment_stats
from pulsedom.gaussian import DegenerateMeasurementError, SystemState, conditional_variance, covariance_matrix
from pulsedom.optimize import (
    Budget,
    allocate_pulses,
    evaluate_protocol,
    golden_section,
    golden_section_batch,
    mechanical_target,
    optimal_homodyne_angle,
    single_pulse_value,
)
from pulsedom.protocol import FreeEvolution, Pulse, double_pulse, run_protocol

CAPTION = OscillatorParams.from_hz(1e3, 1.0, temperature=100.0)
TEXT = OscillatorParams.from_hz(1e5, 1.0, temperature=1.0)
WINDOW = (1e-6, math.pi / 2)


def dense_scan(state, target, n=10_000):
    angles = np.arange(n) * (math.pi / n)
    vals = [conditional_variance(target, state.optical_quadrature(a), state.registry) for a in angles]
    k = int(np.argmin(vals))
    return angles[k], vals[k]


def two_quadrature_bound(state, target):
    """Best single-quadrature conditioning equals conditioning on both optical
    quadratures (one linear combination carries all the information)."""
    c = covariance_matrix([target, state.live["X_L"], state.live["P_L"]], state.registry)
    return c[0, 0] - c[0, 1:] @ np.linalg.solve(c[1:, 1:], c[1:, 0])


def test_golden_section():
    x, fx, n = golden_section(lambda t: (t - 0.3) ** 2 + 1, -2.0, 2.0)
    assert x == pytest.approx(0.3, abs=1e-7) and fx == pytest.approx(1.0, abs=1e-14)
    xs, fs = golden_section_batch(lambda t: (t - np.array([0.1, -0.4])) ** 2, np.array([-1.0, -1.0]),
                                  np.array([1.0, 1.0]))
    np.testing.assert_allclose(xs, [0.1, -0.4], atol=1e-7)


def test_no_kerr_lossless_measures_phase_quadrature():
    s = run_protocol([Pulse(2.0)], OscillatorParams(1.0, 0.0, 3.0))
    angle, v = optimal_homodyne_angle(s, s.snapshots["initial"]["X_M"])
    assert angle == pytest.approx(math.pi / 2, abs=1e-6)


def test_rotated_homodyne_beats_phase_quadrature_and_matches_dense_scan():
    osc = OscillatorParams(1.0, 0.0, 2.0)
    s = run_protocol(double_pulse(1.0, 1.0, math.pi / 2), osc)
    target = s.snapshots["initial"]["P_M"]
    angle, v = optimal_homodyne_angle(s, target)
    at_phase = conditional_variance(target, s.optical_quadrature(math.pi / 2), s.registry)
    assert v < at_phase - 1e-3
    a_dense, v_dense = dense_scan(s, target)
    assert v <= v_dense + 1e-12
    assert abs(angle - a_dense) < 2 * math.pi / 10_000
    assert v == pytest.approx(two_quadrature_bound(s, target), rel=1e-9)


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0.01, 3.0), st.floats(0.2, 1.0),
       st.floats(0, math.pi), st.floats(0, 100))
def test_homodyne_optimum_equals_two_quadrature_bound(l1, l2, theta, eta, phi, nbar):
    osc = OscillatorParams(1.0, 0.01, nbar)
    s = run_protocol(double_pulse(l1, l2, theta, eta), osc)
    for target in (mechanical_target(s, phi, True), mechanical_target(s, phi, False)):
        _, v = optimal_homodyne_angle(s, target)
        bound = two_quadrature_bound(s, target)
        assert v == pytest.approx(bound, rel=1e-8, abs=1e-10 * s.variance(target))


def test_grid_doubling_invariance():
    s = run_protocol(double_pulse(3.0, -1.2, 0.4, 0.9), CAPTION)
    target = mechanical_target(s, 0.7, False)
    a1, v1 = optimal_homodyne_angle(s, target, n_grid=64)
    a2, v2 = optimal_homodyne_angle(s, target, n_grid=128)
    assert abs(v1 - v2) <= 1e-9 * max(1.0, v1)


def test_degenerate_meter():
    s = run_protocol([], state=SystemState.initial(light_cov=np.zeros((2, 2))))
    with pytest.raises(DegenerateMeasurementError):
        optimal_homodyne_angle(s, s.live["X_M"])


def test_kernel_matches_engine():
    rng = np.random.default_rng(4)
    for _ in range(20):
        l1, l2 = rng.uniform(-30, 30, 2)
        th, eta, phi = rng.uniform(1e-3, 2), rng.uniform(0.3, 1), rng.uniform(0, math.pi)
        seg = segment_stats(CAPTION, th)
        for posterior in (False, True):
            _, _, v = evaluate_protocol(double_pulse(l1, l2, th, eta), CAPTION, phi, posterior)
            k = kernels.two_pulse_condvar(np.array([l1]), np.array([l2]), eta, eta, seg.mean_map,
                                          seg.added_noise, CAPTION.bath_variance * np.eye(2),
                                          np.array([math.cos(phi), math.sin(phi)]), posterior)[0]
            assert k == pytest.approx(v, rel=1e-9, abs=1e-12)


def test_kernel_backends_agree():
    rng = np.random.default_rng(5)
    n = 500
    seg = segment_stats(CAPTION, 0.05)
    args = (rng.uniform(-50, 50, n), rng.uniform(-50, 50, n), 0.9, 0.9,
            np.ascontiguousarray(np.broadcast_to(seg.mean_map, (n, 2, 2))),
            np.ascontiguousarray(np.broadcast_to(seg.added_noise, (n, 2, 2))),
            CAPTION.bath_variance * np.eye(2), np.array([0.6, 0.8]))
    for posterior in (False, True):
        a = kernels.two_pulse_condvar_np(*args, posterior)
        b = kernels._two_pulse_condvar_nb(*args, posterior)
        np.testing.assert_allclose(a, b, rtol=1e-10)


def test_position_needs_one_pulse_at_quarter_period_delay():
    # ground state, lossless: with the delay pinned at a quarter period the
    # second pulse would read momentum, so the optimum drops it
    osc = OscillatorParams(1.0, 0.0, 0.0)
    L = 3.0
    r = allocate_pulses(Budget(L), 0.0, math.pi / 2, 1.0, osc)
    assert abs(r.lambda2) < 1e-6
    assert r.best_value == pytest.approx(0.5 / (1 + L * L), rel=1e-9)
    _, _, single = evaluate_protocol([Pulse(L)], osc, 0.0, False)
    assert single == pytest.approx(0.5 / (1 + L * L), rel=1e-12)


def test_position_with_free_delay_stacks_aligned_pulses():
    # with the delay free, two nearly aligned pulses add coherently and beat one pulse
    osc = OscillatorParams(1.0, 0.0, 0.0)
    L = 3.0
    r = allocate_pulses(Budget(L), 0.0, WINDOW, 1.0, osc)
    assert r.best_value <= 0.5 / (1 + L * L)
    assert r.best_value == pytest.approx(0.5 / (1 + 2 * L * L), rel=1e-3)


def test_allocation_respects_budget_and_sign_convention():
    for phi in (0.2, math.pi / 2, 2.5):
        r = allocate_pulses(Budget(7.0), phi, WINDOW, 0.9, CAPTION)
        assert r.lambda1 ** 2 + r.lambda2 ** 2 == pytest.approx(49.0, rel=1e-12)
        assert r.lambda1 >= 0
        assert WINDOW[0] <= r.theta <= WINDOW[1]
        assert r.trace["converged"]
        assert r.best_value <= r.trace["probed_min"] * (1 + 1e-12)


@pytest.mark.parametrize("phi", [math.pi / 2, math.pi / 4, math.pi / 8])
def test_monotone_in_budget(phi):
    vals = [allocate_pulses(Budget(L), phi, WINDOW, 1.0, CAPTION).best_value for L in np.geomspace(0.1, 1e3, 17)]
    steps = np.diff(vals)
    assert np.all(steps <= 1e-9 * np.abs(vals[:-1]))


def test_single_pulse_floor():
    seg = segment_stats(CAPTION, math.pi / 2)
    M, N = seg.mean_map, seg.added_noise
    s0 = CAPTION.bath_variance
    floor = s0 - (M[0, 1] * s0) ** 2 / ((M[0, 0] ** 2 + M[0, 1] ** 2) * s0 + N[0, 0])
    previous = math.inf
    for lam in (1.0, 10.0, 100.0, 1e3):
        _, v = single_pulse_value(lam, math.pi / 2, 1.0, CAPTION)
        assert v >= floor * (1 - 1e-12)
        assert v <= previous
        previous = v
    assert v == pytest.approx(floor, rel=0.01)


def test_deterministic():
    a = allocate_pulses(Budget(5.0), 0.9, WINDOW, 0.8, CAPTION, posterior=True)
    b = allocate_pulses(Budget(5.0), 0.9, WINDOW, 0.8, CAPTION, posterior=True)
    assert a.allocation == b.allocation and a.best_value == b.best_value
    assert a.homodyne_angle == b.homodyne_angle


def test_bad_inputs():
    with pytest.raises(ValueError):
        Budget(0.0)
    with pytest.raises(ValueError):
        allocate_pulses(Budget(1.0), 0.0, (0.5, 0.1), 1.0, CAPTION)
    with pytest.raises(ValueError):
        allocate_pulses(Budget(1.0), 0.0, WINDOW, 0.0, CAPTION)


def test_momentum_anchor_at_1khz_100k():
    # a posteriori momentum, 1 kHz / 1 Hz / 100 K, lambda_total = 1, delay optimized
    r = allocate_pulses(Budget(1.0), math.pi / 2, WINDOW, 1.0, CAPTION, posterior=True)
    assert r.best_value == pytest.approx(100.0, rel=0.25)


def test_momentum_anchor_at_100khz_100k():
    osc = OscillatorParams.from_hz(1e5, 1.0, temperature=100.0)
    r = allocate_pulses(Budget(1.0), math.pi / 2, 2 * math.pi / 50, 1.0, osc, posterior=True)
    assert r.best_value == pytest.approx(100.0, rel=0.25)
