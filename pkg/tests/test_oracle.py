import math
import os
import subprocess
import sys

import numpy as np
import pytest

from pulsedom import kernels
from pulsedom._accel import HAVE_NUMBA
from pulsedom.dynamics import OscillatorParams
from pulsedom.optimize import Budget, allocate_pulses
from pulsedom.oracle import StepSizeError, TrajectoryConfig, simulate_ensemble
from pulsedom.protocol import FreeEvolution, Pulse, Snapshot, double_pulse, run_protocol

CAPTION = OscillatorParams.from_hz(1e3, 1.0, temperature=100.0)


def within(ens_value, se, exact, k=3.0):
    return abs(ens_value - exact) < k * se


def test_config_validation():
    with pytest.raises(ValueError):
        TrajectoryConfig(n_paths=1)
    with pytest.raises(ValueError):
        TrajectoryConfig(scheme="rk4")
    with pytest.raises(ValueError):
        TrajectoryConfig(seed=-1)
    with pytest.raises(ValueError):
        TrajectoryConfig(dt=0.02).n_steps(OscillatorParams(1.0, 0.1, 0.0), 1.0)


def test_normals_are_standard_and_reproducible():
    keys = kernels.path_keys(9, 3, np.arange(200_000, dtype=np.uint64))
    z = kernels.normals_np(keys, 7)
    assert abs(z.mean()) < 4 / math.sqrt(z.size)
    assert abs(z.var() - 1) < 4 * math.sqrt(2 / z.size)
    np.testing.assert_array_equal(z, kernels.normals_np(keys, 7))
    assert abs(np.corrcoef(z, kernels.normals_np(keys, 8))[0, 1]) < 4 / math.sqrt(z.size)


def test_lossless_rotation_keeps_variance():
    osc = OscillatorParams(1.0, 0.0, 4.0)
    ens = simulate_ensemble([FreeEvolution(2.0)], osc, TrajectoryConfig(n_paths=50_000, seed=1))
    for q in ("X_M", "P_M"):
        v, se = ens.variance(q)
        assert within(v, se, 4.5)


def test_relaxes_to_equilibrium():
    osc = OscillatorParams(1.0, 0.2, 3.0)
    cfg = TrajectoryConfig(n_paths=50_000, seed=2, dt=0.01)
    ens = simulate_ensemble([FreeEvolution(60.0)], osc, cfg, init_cov=np.zeros((2, 2)))
    for q in ("X_M", "P_M"):
        v, se = ens.variance(q)
        assert within(v, se, 3.5)


def test_conditional_variance_at_lambda_6_matches_engine():
    r = allocate_pulses(Budget(6.0), math.pi / 4, (1e-6, math.pi / 2), 1.0, CAPTION)
    steps = double_pulse(*r.allocation)
    ens = simulate_ensemble(steps, CAPTION, TrajectoryConfig(n_paths=100_000, seed=21))
    a = r.homodyne_angle
    mc, se = ens.conditional_variance({"initial.X_M": math.cos(math.pi / 4), "initial.P_M": math.sin(math.pi / 4)},
                                      {"X_L": math.cos(a), "P_L": math.sin(a)})
    assert within(mc, se, r.best_value)


def test_optimized_delay_variance_growth_matches_engine():
    r = allocate_pulses(Budget(6.0), math.pi / 2, (1e-6, math.pi / 2), 1.0, CAPTION)
    steps = [FreeEvolution(r.theta)]
    s = run_protocol(steps, CAPTION)
    ens = simulate_ensemble(steps, CAPTION, TrajectoryConfig(n_paths=100_000, seed=22))
    v, se = ens.variance("X_M")
    assert within(v, se, s.variance(s.live["X_M"]))


def test_full_covariance_matches_engine():
    osc = OscillatorParams(1.0, 0.05, 10.0)
    steps = [Pulse(1.2), Snapshot("mid")] + double_pulse(0.5, -0.8, 0.6, 0.7)
    s = run_protocol(steps, osc)
    ens = simulate_ensemble(steps, osc, TrajectoryConfig(n_paths=100_000, seed=4))
    forms = [s[n] for n in ens.names]
    from pulsedom.gaussian import covariance_matrix
    exact = covariance_matrix(forms, s.registry)
    z = np.abs(ens.covariance - exact) / np.maximum(ens.covariance_se, 1e-300)
    mask = ens.covariance_se > 0
    assert np.mean(z[mask] < 3) > 0.97


def test_halving_dt_changes_little():
    osc = OscillatorParams(1.0, 0.05, 20.0)
    steps = [FreeEvolution(1.0)]
    a = simulate_ensemble(steps, osc, TrajectoryConfig(n_paths=50_000, seed=8, dt=0.01))
    b = simulate_ensemble(steps, osc, TrajectoryConfig(n_paths=50_000, seed=8, dt=0.005))
    for q in ("X_M", "P_M"):
        va, se = a.variance(q)
        vb, _ = b.variance(q)
        assert abs(va - vb) < se


def test_deterministic_and_chunk_invariant():
    steps = double_pulse(1.0, -0.3, 0.2, 0.8)
    a = simulate_ensemble(steps, CAPTION, TrajectoryConfig(n_paths=3000, seed=77, chunk=1000))
    b = simulate_ensemble(steps, CAPTION, TrajectoryConfig(n_paths=3000, seed=77, chunk=4096))
    c = simulate_ensemble(steps, CAPTION, TrajectoryConfig(n_paths=3000, seed=77, chunk=1000))
    np.testing.assert_array_equal(a.samples, b.samples)
    np.testing.assert_array_equal(a.samples, c.samples)
    d = simulate_ensemble(steps, CAPTION, TrajectoryConfig(n_paths=3000, seed=78))
    assert not np.array_equal(a.samples, d.samples)


@pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")
def test_backends_agree():
    keys = kernels.path_keys(3, 5, np.arange(2000, dtype=np.uint64))
    args = (keys, 4, 300, 1e-2, 1.0, 0.1, 2.0)
    for heun in (True, False):
        x1, p1 = np.full(2000, 0.3), np.full(2000, -0.2)
        x2, p2 = x1.copy(), p1.copy()
        kernels.langevin_np(x1, p1, *args, heun)
        kernels._langevin_nb(x2, p2, *args, heun)
        np.testing.assert_allclose(x1, x2, rtol=1e-12, atol=1e-13)
        np.testing.assert_allclose(p1, p2, rtol=1e-12, atol=1e-13)


def test_numpy_fallback_via_environment(tmp_path):
    code = ("import numpy as np\n"
            "from pulsedom import kernels\n"
            "from pulsedom.oracle import TrajectoryConfig, simulate_ensemble\n"
            "from pulsedom.dynamics import OscillatorParams\n"
            "from pulsedom.protocol import double_pulse\n"
            "e = simulate_ensemble(double_pulse(1.0, -0.5, 0.3, 0.9), OscillatorParams(1.0, 0.1, 5.0),"
            " TrajectoryConfig(n_paths=500, seed=3))\n"
            f"np.save(r'{tmp_path}/' + kernels.backend() + '.npy', e.samples)\n")
    env = dict(os.environ, PULSEDOM_DISABLE_NUMBA="1")
    subprocess.run([sys.executable, "-c", code], check=True, env=env)
    assert (tmp_path / "numpy.npy").exists()
    if HAVE_NUMBA:
        env.pop("PULSEDOM_DISABLE_NUMBA")
        subprocess.run([sys.executable, "-c", code], check=True, env=env)
        np.testing.assert_allclose(np.load(tmp_path / "numpy.npy"), np.load(tmp_path / "numba.npy"),
                                   rtol=1e-10, atol=1e-10)


def test_blow_up_is_reported():
    # explicit Euler on an undamped oscillator is unconditionally unstable
    osc = OscillatorParams(1.0, 1e-9, 0.0)
    cfg = TrajectoryConfig(n_paths=100, seed=0, scheme="euler", dt=0.01)
    with pytest.raises(StepSizeError):
        simulate_ensemble([FreeEvolution(3000.0)], osc, cfg)


def test_moments_dump(tmp_path):
    ens = simulate_ensemble([Pulse(1.0)], None, TrajectoryConfig(n_paths=1000, seed=1))
    path = tmp_path / "m.tsv"
    ens.dump_moments(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "name\tmean\tvariance\tstd_error"
    assert len(lines) == 1 + len(ens.names)
    name, mu, var, se = lines[1].split("\t")
    assert name == "X_M" and float(var) > 0
