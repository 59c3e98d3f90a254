"""Homodyne-angle and pulse-allocation search.

Everything here is deterministic: fixed grids followed by golden-section
refinement, with ties resolved toward the first (smallest) grid entry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .dynamics import OscillatorParams, segment_stats
from .gaussian import (
    DEGENERATE_METER_TOL,
    DegenerateMeasurementError,
    QuadratureForm,
    SystemState,
    whitened_rows,
    quadrature_at_angle,
)
from .protocol import ProtocolStep, double_pulse, run_protocol, single_pulse_posterior, single_pulse_prior

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section(f: Callable[[float], float], a: float, b: float, tol: float = 1e-12, maxiter: int = 200):
    """Minimize a unimodal ``f`` on ``[a, b]``; returns ``(x, f(x), n_evals)``."""
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    n = 2
    while abs(b - a) > tol * max(1.0, abs(a) + abs(b)) and n < maxiter:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
        n += 1
    return (c, fc, n) if fc <= fd else (d, fd, n)


def golden_section_batch(f: Callable[[np.ndarray], np.ndarray], a, b, iters: int = 80):
    """Run independent golden-section searches in lockstep.

    ``f`` maps an array of abscissae to an array of values; bracket ``i`` is
    ``[a[i], b[i]]``. Returns ``(x, fx)`` arrays.
    """
    a = np.array(a, dtype=float)
    b = np.array(b, dtype=float)
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        left = fc <= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        d_keep, fd_keep = np.where(left, c, d), np.where(left, fc, fd)
        c_keep, fc_keep = np.where(left, c, d), np.where(left, fc, fd)
        probe = np.where(left, b - INV_PHI * (b - a), a + INV_PHI * (b - a))
        fp = f(probe)
        c, fc = np.where(left, probe, c_keep), np.where(left, fp, fc_keep)
        d, fd = np.where(left, d_keep, probe), np.where(left, fd_keep, fp)
    pick = fc <= fd
    return np.where(pick, c, d), np.where(pick, fc, fd)


# -- homodyne angle ----------------------------------------------------------


def _optical_frame(state: SystemState, target: QuadratureForm) -> np.ndarray:
    """Triangular factor ``R`` of the whitened ``(X_L, P_L, target)`` rows."""
    W = whitened_rows([state.live["X_L"], state.live["P_L"], target], state.registry)
    R = np.linalg.qr(W.T, mode="r")
    out = np.zeros((3, 3))
    out[: R.shape[0], : R.shape[1]] = R[:3, :3]
    return out


def _condvar_curve(R: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """``V(t | X_L cos a + P_L sin a)`` from the frame of :func:`_optical_frame`.

    In that frame the meter is ``b = (c R00 + s R01, s R11, 0)`` and the
    target ``(R02, R12, R22)``; the residual variance is ``R22**2`` plus the
    in-plane part, computed without subtracting large numbers.
    """
    c, s = np.cos(angles), np.sin(angles)
    b1 = c * R[0, 0] + s * R[0, 1]
    b2 = s * R[1, 1]
    vb = b1 * b1 + b2 * b2
    cross = R[0, 2] * b2 - R[1, 2] * b1
    vt = R[0, 2] ** 2 + R[1, 2] ** 2 + R[2, 2] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        out = R[2, 2] ** 2 + cross * cross / vb
    out = np.minimum(out, vt)
    return np.where(vb < DEGENERATE_METER_TOL, np.inf, out)


def _frame_optimum(R: np.ndarray) -> float | None:
    """Angle whose meter lies along the target's in-plane component."""
    if R[0, 0] == 0.0 or R[1, 1] == 0.0:
        return None
    s = R[1, 2] / R[1, 1]
    c = (R[0, 2] - s * R[0, 1]) / R[0, 0]
    if c == 0.0 and s == 0.0:
        return None
    return math.atan2(s, c) % math.pi


def optimal_homodyne_angle(state: SystemState, target: QuadratureForm, n_grid: int = 64, tol: float = 1e-13):
    """Homodyne angle in ``[0, pi)`` minimizing ``V(target | X_L^angle)``.

    Coarse grid of ``n_grid`` angles, then golden section between the
    neighbours of the best grid point. For strong pulses the minimum is far
    narrower than the grid spacing, so the analytic minimizer in the
    orthogonalized frame is also tried. Returns ``(angle, conditional variance)``.
    """
    R = _optical_frame(state, target)
    grid = np.arange(n_grid) * (math.pi / n_grid)
    vals = _condvar_curve(R, grid)
    if not np.isfinite(vals).any():
        raise DegenerateMeasurementError("optical meter is degenerate at every homodyne angle")
    k = int(np.argmin(vals))
    step = math.pi / n_grid

    def f(a):
        return float(_condvar_curve(R, np.array([a]))[0])

    best = (float(vals[k]), float(grid[k]))
    x, fx, _ = golden_section(f, grid[k] - step, grid[k] + step, tol=tol)
    best = min(best, (fx, x % math.pi))
    a_star = _frame_optimum(R)
    if a_star is not None:
        best = min(best, (f(a_star), a_star))
    return best[1], best[0]


# -- pulse allocation --------------------------------------------------------


@dataclass(frozen=True)
class Budget:
    """Photon budget ``lambda1**2 + lambda2**2 == lambda_total**2``."""

    lambda_total: float

    def __post_init__(self):
        if not self.lambda_total > 0:
            raise ValueError("lambda_total must be positive")

    def split(self, alpha: float) -> tuple[float, float]:
        return self.lambda_total * math.cos(alpha), self.lambda_total * math.sin(alpha)


@dataclass
class OptimizationResult:
    best_value: float
    homodyne_angle: float
    allocation: tuple[float, float, float]
    trace: dict = field(default_factory=dict)

    @property
    def lambda1(self) -> float:
        return self.allocation[0]

    @property
    def lambda2(self) -> float:
        return self.allocation[1]

    @property
    def theta(self) -> float:
        return self.allocation[2]


def mechanical_target(state: SystemState, phi: float, posterior: bool) -> QuadratureForm:
    """Mechanical quadrature at angle ``phi``: final (``posterior``) or initial."""
    src = state.live if posterior else state.snapshots["initial"]
    return quadrature_at_angle(src["X_M"], src["P_M"], phi)


def evaluate_protocol(steps: Sequence[ProtocolStep], osc: OscillatorParams, phi: float, posterior: bool,
                      init_cov=None, n_grid: int = 64):
    """Run ``steps`` and return ``(state, homodyne angle, conditional variance)``."""
    init = SystemState.initial(_init_cov(osc, init_cov))
    state = run_protocol(steps, osc, init)
    angle, value = optimal_homodyne_angle(state, mechanical_target(state, phi, posterior), n_grid=n_grid)
    return state, angle, value


def _init_cov(osc: OscillatorParams, init_cov):
    if init_cov is None:
        return osc.bath_variance * np.eye(2)
    return np.asarray(init_cov, dtype=float)


def aligned_split(M: np.ndarray, phi: float, eta: float, posterior: bool) -> float:
    """Split angle ``alpha`` whose effective measured quadrature matches ``phi``.

    Matching is on the initial-state direction of the meter: for large
    initial variance the optimum sits in a narrow valley around it.
    """
    v = np.array([math.cos(phi), math.sin(phi)])
    if posterior:
        v = v @ M
    l1 = M[0, 1] * v[0] - M[0, 0] * v[1]
    l2 = math.sqrt(eta) * v[1]
    if l1 < 0 or (l1 == 0 and l2 < 0):
        l1, l2 = -l1, -l2
    if l1 == 0 and l2 == 0:
        return 0.0
    return math.atan2(l2, l1)


def allocate_pulses(budget: Budget, phi: float, theta, eta: float, osc: OscillatorParams, *,
                    posterior: bool = False, init_cov=None, n_theta: int = 48, n_alpha: int = 65,
                    levels: int = 3, valley_width: float = 0.05, golden_iters: int = 70) -> OptimizationResult:
    """Best double-pulse allocation on the budget circle.

    ``theta`` is a fixed delay (float) or a ``(lo, hi)`` search window. The
    split ``lambda1 = L cos(alpha)``, ``lambda2 = L sin(alpha)`` keeps
    ``lambda1 >= 0`` and lets ``lambda2`` take either sign. The minimized
    quantity is the conditional variance of the mechanical quadrature
    ``phi`` (initial state unless ``posterior``) given the best homodyne
    quadrature.
    """
    if not 0.0 < eta <= 1.0:
        raise ValueError("eta must lie in (0, 1]")
    init = _init_cov(osc, init_cov)
    tvec = np.array([math.cos(phi), math.sin(phi)])
    L = budget.lambda_total
    evals = 0

    if np.ndim(theta) == 0:
        thetas = np.array([float(theta)])
        levels = 1
    else:
        lo, hi = (float(t) for t in theta)
        if not 0 < lo <= hi:
            raise ValueError("theta window must satisfy 0 < lo <= hi")
        thetas = np.geomspace(lo, hi, n_theta) if hi > lo else np.array([lo])
    if thetas.size == 0:
        raise ValueError("empty theta search set")

    def inner(th_arr):
        """Best split for each delay in ``th_arr``: returns (alpha, value)."""
        nonlocal evals
        stats = [segment_stats(osc, float(t)) for t in th_arr]
        mm = np.array([s.mean_map for s in stats])
        nn = np.array([s.added_noise for s in stats])
        k = len(th_arr)
        coarse = np.linspace(-math.pi / 2, math.pi / 2, n_alpha)
        step = coarse[1] - coarse[0]
        A = np.repeat(coarse[None, :], k, axis=0)
        vals = kernels.two_pulse_condvar(
            (L * np.cos(A)).ravel(), (L * np.sin(A)).ravel(), eta, eta,
            np.repeat(mm, n_alpha, axis=0), np.repeat(nn, n_alpha, axis=0), init, tvec, posterior,
        ).reshape(k, n_alpha)
        evals += vals.size
        best_coarse = coarse[np.argmin(vals, axis=1)]
        aligned = np.array([aligned_split(m, phi, eta, posterior) for m in mm])
        centers = np.concatenate([best_coarse, aligned])
        widths = np.concatenate([np.full(k, step), np.full(k, valley_width)])
        mm2 = np.concatenate([mm, mm])
        nn2 = np.concatenate([nn, nn])

        def f(alpha):
            nonlocal evals
            evals += alpha.size
            return kernels.two_pulse_condvar(L * np.cos(alpha), L * np.sin(alpha), eta, eta, mm2, nn2,
                                             init, tvec, posterior)

        lo_a = np.clip(centers - widths, -math.pi / 2, math.pi / 2)
        hi_a = np.clip(centers + widths, -math.pi / 2, math.pi / 2)
        xa, fa = golden_section_batch(f, lo_a, hi_a, iters=golden_iters)
        xa, fa = xa.reshape(2, k), fa.reshape(2, k)
        cand_a = np.vstack([best_coarse, xa])
        cand_f = np.vstack([vals.min(axis=1), fa])
        j = np.argmin(cand_f, axis=0)
        cols = np.arange(k)
        return cand_a[j, cols], cand_f[j, cols]

    alphas, values = inner(thetas)
    probed_min = float(values.min())
    for _ in range(levels - 1):
        i = int(np.argmin(values))
        lo_t = thetas[max(i - 1, 0)]
        hi_t = thetas[min(i + 1, len(thetas) - 1)]
        if hi_t <= lo_t:
            break
        finer = np.geomspace(lo_t, hi_t, 17)
        fa, fv = inner(finer)
        thetas = np.concatenate([thetas, finer])
        alphas = np.concatenate([alphas, fa])
        values = np.concatenate([values, fv])
        order = np.argsort(thetas, kind="stable")
        thetas, alphas, values = thetas[order], alphas[order], values[order]
        probed_min = min(probed_min, float(fv.min()))

    i = int(np.argmin(values))
    lam1, lam2 = budget.split(float(alphas[i]))
    th = float(thetas[i])
    _, angle, value = evaluate_protocol(double_pulse(lam1, lam2, th, eta), osc, phi, posterior, init)
    return OptimizationResult(
        best_value=value,
        homodyne_angle=angle,
        allocation=(lam1, lam2, th),
        trace={
            "evaluations": evals,
            "converged": bool(np.isfinite(value)),
            "kernel_value": float(values[i]),
            "probed_min": probed_min,
            "backend": kernels.backend(),
        },
    )


def single_pulse_value(lam: float, phi: float, eta: float, osc: OscillatorParams, *, posterior: bool = False,
                       init_cov=None):
    """Conditional variance of the single-pulse scheme (wait-then-measure for
    a priori targets, measure-then-wait for a posteriori ones).

    Returns ``(homodyne angle, conditional variance)``.
    """
    steps = single_pulse_posterior(lam, phi, eta) if posterior else single_pulse_prior(lam, phi, eta)
    _, angle, value = evaluate_protocol(steps, osc, phi, posterior, init_cov)
    return angle, value
