import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from conftest import rotation
from pulsedom.dynamics import (
    HBAR,
    K_B,
    OscillatorParams,
    UnsupportedRegimeError,
    apply_free_evolution,
    compose_segments,
    segment_stats,
    segment_stats_quadrature,
    thermal_occupation,
)
from pulsedom.gaussian import ModeKind, SystemState
from pulsedom.oracle import TrajectoryConfig, simulate_ensemble
from pulsedom.protocol import FreeEvolution

CAPTION = OscillatorParams.from_hz(1e3, 1.0, temperature=100.0)


def van_loan(osc, theta):
    """Mean map and added noise from one block exponential (independent route)."""
    t = theta / osc.omega_m
    A, D = osc.drift, osc.diffusion
    big = np.zeros((4, 4))
    big[:2, :2] = -A
    big[:2, 2:] = D
    big[2:, 2:] = A.T
    F = expm(big * t)
    M = expm(A * t)
    return M, F[2:, 2:].T @ F[:2, 2:]


SEGMENT_CASES = [(g, th) for g in (1e-3, 0.2, 1.5) for th in (1e-4, 1e-2, 0.5, 1.0, 3.0, 40.0) if g * th <= 20]


def test_parameter_validation():
    with pytest.raises(UnsupportedRegimeError):
        OscillatorParams(1.0, 2.5, 0.0)
    with pytest.raises(ValueError):
        OscillatorParams(-1.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        segment_stats(CAPTION, -0.1)
    assert CAPTION.quality_factor == pytest.approx(1e3)


def test_thermal_occupation():
    w = 2 * math.pi * 1e3
    x = HBAR * w / (K_B * 100.0)
    # x ~ 5e-10, so use the Laurent series rather than a cancelling exp(x) - 1
    assert thermal_occupation(100.0, w) == pytest.approx(1 / x - 0.5 + x / 12, rel=1e-12)
    xc = HBAR * 2 * math.pi * 1e12 / (K_B * 10.0)
    assert thermal_occupation(10.0, 2 * math.pi * 1e12) == pytest.approx(1 / (math.exp(xc) - 1), rel=1e-12)
    assert thermal_occupation(100.0, w, high_temperature=True) == pytest.approx(1 / x, rel=1e-12)
    assert thermal_occupation(0.0, w) == 0.0


def test_phonons_per_cycle_is_nbar_over_q_times_two_pi():
    osc = OscillatorParams.from_hz(1e5, 1.0, temperature=1.0)
    assert osc.phonons_per_cycle() == pytest.approx(2 * math.pi * osc.nbar / osc.quality_factor, rel=1e-12)


@pytest.mark.parametrize("theta", [0.0, 0.3, 2.0, 17.0])
def test_lossless_segment_is_a_rotation(theta):
    seg = segment_stats(OscillatorParams(3.0, 0.0, 7.0), theta)
    np.testing.assert_allclose(seg.mean_map, rotation(theta), atol=1e-15)
    assert not np.any(seg.added_noise)


def test_long_segment_reaches_thermal_equilibrium():
    osc = OscillatorParams(1.0, 0.1, 5.0)
    seg = segment_stats(osc, 400.0)
    total = seg.mean_map @ (0.5 * np.eye(2)) @ seg.mean_map.T + seg.added_noise
    np.testing.assert_allclose(total, 5.5 * np.eye(2), rtol=0, atol=1e-9)


@pytest.mark.parametrize("gamma,theta", SEGMENT_CASES)
def test_segment_matches_block_exponential(theta, gamma):
    osc = OscillatorParams(1.0, gamma, 3.0)
    seg = segment_stats(osc, theta)
    M, N = van_loan(osc, theta)
    np.testing.assert_allclose(seg.mean_map, M, rtol=1e-10, atol=1e-13)
    np.testing.assert_allclose(seg.added_noise, N, rtol=1e-8, atol=1e-12 * np.abs(N).max())


def test_closed_form_matches_quadrature_over_log_grid():
    osc = OscillatorParams(1.0, 0.05, 20.0)
    for theta in np.geomspace(1e-4, 1e2, 13):
        a, b = segment_stats(osc, theta), segment_stats_quadrature(osc, theta)
        np.testing.assert_allclose(a.mean_map, b.mean_map, rtol=1e-8, atol=1e-12)
        assert np.max(np.abs(a.added_noise - b.added_noise)) <= 1e-8 * np.max(np.abs(b.added_noise))


def _loglog_slope(theta, y):
    return np.polyfit(np.log(theta), np.log(y), 1)[0]


def test_small_angle_scaling_laws():
    theta = np.geomspace(1e-3, 1e-1, 25)
    for osc in (CAPTION, OscillatorParams(1.0, 1e-2, 0.0)):
        nxx = [segment_stats(osc, t).added_noise[0, 0] for t in theta]
        npp = [segment_stats(osc, t).added_noise[1, 1] for t in theta]
        assert abs(_loglog_slope(theta, nxx) - 3.0) < 0.1
        assert abs(_loglog_slope(theta, npp) - 1.0) < 0.1


@given(st.floats(0.0, 1.9), st.floats(0.0, 1e4), st.floats(0.0, 20.0), st.floats(0.0, 20.0))
def test_semigroup(gamma, nbar, a, b):
    osc = OscillatorParams(1.0, gamma, nbar)
    whole = segment_stats(osc, a + b)
    split = compose_segments(segment_stats(osc, a), segment_stats(osc, b))
    np.testing.assert_allclose(split.mean_map, whole.mean_map, rtol=1e-9, atol=1e-12)
    scale = max(np.abs(whole.added_noise).max(), 1e-300)
    assert np.abs(split.added_noise - whole.added_noise).max() <= 1e-9 * scale


@given(st.floats(0.0, 1.9), st.floats(0.0, 1e6), st.floats(0.0, 50.0))
def test_added_noise_is_psd(gamma, nbar, theta):
    n = segment_stats(OscillatorParams(1.0, gamma, nbar), theta).added_noise
    assert np.allclose(n, n.T)
    assert np.linalg.eigvalsh(n).min() >= -1e-12 * max(np.abs(n).max(), 1e-300)


def test_free_evolution_on_state():
    s = SystemState.thermal(2.0)
    assert apply_free_evolution(s, CAPTION, 0.0) is s
    r = apply_free_evolution(s, OscillatorParams(1.0, 0.0, 2.0), math.pi / 2)
    assert len(r.registry) == len(s.registry)
    assert r.live["X_M"].allclose(s.live["P_M"], atol=1e-15)
    assert r.live["P_M"].allclose(-s.live["X_M"], atol=1e-15)
    d = apply_free_evolution(s, CAPTION, 0.2)
    new = [m for m in d.registry if m.id not in s.registry]
    assert len(new) == 1 and new[0].kind is ModeKind.THERMAL_SEGMENT and new[0].dim == 2
    np.testing.assert_array_equal(new[0].second_moments, segment_stats(CAPTION, 0.2).added_noise)
    assert d.live["X_L"] is s.live["X_L"] and d.live["P_L"] is s.live["P_L"]


def test_free_evolution_variance_growth_matches_ensemble():
    cfg = TrajectoryConfig(n_paths=100_000, seed=11)
    steps = [FreeEvolution(0.05)]
    from pulsedom.protocol import run_protocol
    s = run_protocol(steps, CAPTION)
    ens = simulate_ensemble(steps, CAPTION, cfg)
    for q in ("X_M", "P_M"):
        v, se = ens.variance(q)
        assert abs(v - s.variance(s.live[q])) < 3 * se


@pytest.mark.slow
def test_added_position_noise_matches_euler_maruyama():
    theta = 0.01
    t = theta / CAPTION.omega_m
    cfg = TrajectoryConfig(n_paths=1_000_000, dt=t / 1e4, seed=5, scheme="euler")
    ens = simulate_ensemble([FreeEvolution(theta)], CAPTION, cfg, init_cov=np.zeros((2, 2)))
    v, se = ens.variance("X_M")
    assert abs(v - segment_stats(CAPTION, theta).added_noise[0, 0]) < 3 * se
