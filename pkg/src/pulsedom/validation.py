"""Invariant suite behind ``pulsedom validate``.

Each check draws random protocols from a seeded generator, measures the
worst violation of one identity and compares it with a fixed tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import OscillatorParams, compose_segments, segment_stats, segment_stats_quadrature
from .gaussian import conditional_covariance, quadrature_at_angle
from .optimize import optimal_homodyne_angle
from .protocol import (
    FreeEvolution,
    Pulse,
    backaction_evading_lambda2,
    double_pulse,
    effective_interaction,
    run_protocol,
    symplectic_form,
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    worst: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.worst <= self.tolerance)

    def as_row(self) -> dict:
        return {"check": self.name, "passed": self.passed, "worst": float(self.worst), "tolerance": self.tolerance}


def _random_triples(rng, n):
    l1 = rng.uniform(-5, 5, n)
    l2 = rng.uniform(-5, 5, n)
    th = rng.uniform(0, 2 * math.pi, n)
    return l1, l2, th


def check_composition(rng, n=1000) -> CheckResult:
    worst = 0.0
    for l1, l2, th in zip(*_random_triples(rng, n)):
        st = run_protocol([Pulse(l1), FreeEvolution(th), Pulse(l2)], OscillatorParams(1.0, 0.0, 0.0))
        m = st.linear_map()
        eff = effective_interaction(l1, l2, th)
        # P_L row on (X_M, P_M) must equal -G (cos phi, sin phi)
        want = -eff.G * np.array([math.cos(eff.phi), math.sin(eff.phi)]) if eff.defined else np.zeros(2)
        worst = max(worst,
                    float(np.max(np.abs(m[3, :2] - want))),
                    abs(m[3, 2] - eff.kerr),
                    abs(m[0, 2] - (-l1 * math.sin(th))))
    return CheckResult("composition identities", worst, 1e-10)


def check_backaction(rng, n=1000) -> CheckResult:
    worst = 0.0
    for l1, th, eta in zip(rng.uniform(-5, 5, n), rng.uniform(0, 2 * math.pi, n), rng.uniform(0.05, 1.0, n)):
        l2 = backaction_evading_lambda2(l1, th, eta)
        st = run_protocol(double_pulse(l1, l2, th, eta), OscillatorParams(1.0, 0.0, 0.0))
        xl0 = st.snapshots["initial"]["X_L"]
        (key, _), = xl0.coeffs.items()
        worst = max(worst, abs(st.live["P_M"].coeffs.get(key, 0.0)))
    return CheckResult("back-action evasion", worst, 1e-12)


def check_symplectic(rng, n=1000) -> CheckResult:
    J = symplectic_form(2)
    worst = 0.0
    osc = OscillatorParams(1.0, 0.0, 0.0)
    for _ in range(n):
        k = int(rng.integers(1, 5))
        steps = []
        for _ in range(k):
            steps += [Pulse(float(rng.uniform(-5, 5))), FreeEvolution(float(rng.uniform(0, 2 * math.pi)))]
        m = run_protocol(steps, osc).linear_map()
        worst = max(worst, float(np.max(np.abs(m @ J @ m.T - J))))
    return CheckResult("symplecticity", worst, 1e-12)


def noise_slopes(osc: OscillatorParams | None = None, lo=1e-3, hi=1e-1, points=21):
    """Log-log slopes of added position and momentum noise vs rotation angle."""
    osc = osc or OscillatorParams(1.0, 1e-3, 1e6)
    th = np.geomspace(lo, hi, points)
    nx = np.array([segment_stats(osc, t).added_noise[0, 0] for t in th])
    np_ = np.array([segment_stats(osc, t).added_noise[1, 1] for t in th])
    return np.polyfit(np.log(th), np.log(nx), 1)[0], np.polyfit(np.log(th), np.log(np_), 1)[0]


def check_theta_cubed() -> CheckResult:
    sx, sp = noise_slopes()
    return CheckResult("added-noise slopes (3, 1)", max(abs(sx - 3.0), abs(sp - 1.0)), 0.1)


def check_semigroup(rng, n=50) -> CheckResult:
    worst = 0.0
    for _ in range(n):
        osc = OscillatorParams(1.0, float(rng.uniform(0, 0.5)), float(rng.uniform(0, 1e3)))
        a, b = rng.uniform(0, 3, 2)
        ab = segment_stats(osc, a + b)
        comp = compose_segments(segment_stats(osc, a), segment_stats(osc, b))
        scale = max(1.0, float(np.max(np.abs(ab.added_noise))))
        worst = max(worst, float(np.max(np.abs(ab.mean_map - comp.mean_map))),
                    float(np.max(np.abs(ab.added_noise - comp.added_noise))) / scale)
    return CheckResult("segment semigroup", worst, 1e-9)


def check_closed_form(rng, n=8) -> CheckResult:
    worst = 0.0
    for th in np.geomspace(1e-4, 1e2, n):
        osc = OscillatorParams(1.0, float(rng.uniform(1e-3, 0.3)), float(rng.uniform(0, 100)))
        a, b = segment_stats(osc, th), segment_stats_quadrature(osc, th)
        scale = max(float(np.max(np.abs(b.added_noise))), 1e-300)
        worst = max(worst, float(np.max(np.abs(a.mean_map - b.mean_map))),
                    float(np.max(np.abs(a.added_noise - b.added_noise))) / scale)
    return CheckResult("closed form vs quadrature", worst, 1e-8)


def check_uncertainty(rng, n=200) -> CheckResult:
    worst = 0.0
    for _ in range(n):
        osc = OscillatorParams(1.0, float(rng.uniform(0, 0.1)), float(rng.uniform(0, 100)))
        l1, l2 = rng.uniform(-20, 20, 2)
        st = run_protocol(double_pulse(l1, l2, float(rng.uniform(0, math.pi)), float(rng.uniform(0.3, 1))), osc)
        angle, _ = optimal_homodyne_angle(st, quadrature_at_angle(st.live["X_M"], st.live["P_M"], 0.7))
        sig = conditional_covariance([st.live["X_M"], st.live["P_M"]], st.optical_quadrature(angle), st.registry)
        worst = max(worst, 0.25 * (1 - 1e-9) - float(np.linalg.det(sig)))
    return CheckResult("conditioned det >= 1/4", max(worst, 0.0), 0.0)


def run_all(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    return [
        check_composition(rng),
        check_backaction(rng),
        check_symplectic(rng),
        check_theta_cubed(),
        check_semigroup(rng),
        check_closed_form(rng),
        check_uncertainty(rng),
    ]
