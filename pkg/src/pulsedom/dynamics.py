"""Damped, thermally driven mechanical oscillator between pulses.

Equations of motion (only the momentum is damped)::

    dX/dt = w P
    dP/dt = -w X - g P + sqrt(2 g) xi,     <xi(t) xi(t')> = (nbar + 1/2) delta(t - t')

so the drift is ``A = [[0, w], [-w, -g]]`` and the diffusion is
``D = diag(0, 2 g (nbar + 1/2))``. Over a rotation angle ``theta`` (time
``theta / w``) the quadratures map through ``exp(A t)`` and pick up a
correlated Gaussian noise pair with covariance
``int_0^t exp(A s) D exp(A s)^T ds``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import constants
from scipy.integrate import quad_vec
from scipy.linalg import expm

from .gaussian import ModeKind, NoiseMode, QuadratureForm, SystemState

HBAR = constants.hbar
K_B = constants.k


class UnsupportedRegimeError(ValueError):
    pass


@dataclass(frozen=True)
class OscillatorParams:
    """Mechanical oscillator; rates in rad/s."""

    omega_m: float
    gamma: float
    nbar: float

    def __post_init__(self):
        if not self.omega_m > 0:
            raise ValueError("omega_m must be positive")
        if not self.gamma >= 0:
            raise ValueError("gamma must be nonnegative")
        if not self.nbar >= 0:
            raise ValueError("nbar must be nonnegative")
        if self.gamma >= 2 * self.omega_m:
            raise UnsupportedRegimeError("only underdamped oscillators (gamma < 2 omega_m) are supported")

    @property
    def quality_factor(self) -> float:
        return math.inf if self.gamma == 0 else self.omega_m / self.gamma

    @property
    def bath_variance(self) -> float:
        """Symmetrized bath variance ``nbar + 1/2``."""
        return self.nbar + 0.5

    @property
    def drift(self) -> np.ndarray:
        return np.array([[0.0, self.omega_m], [-self.omega_m, -self.gamma]])

    @property
    def diffusion(self) -> np.ndarray:
        return np.diag([0.0, 2.0 * self.gamma * self.bath_variance])

    def phonons_per_cycle(self) -> float:
        """Thermal phonons entering per mechanical period, ``nbar * gamma * 2 pi / omega_m``."""
        return self.nbar * self.gamma * 2 * math.pi / self.omega_m

    @classmethod
    def from_hz(cls, f_m: float, gamma_hz: float, *, nbar: float | None = None,
                temperature: float | None = None, high_temperature: bool = False) -> "OscillatorParams":
        """Build from ``omega_m / 2 pi`` and ``gamma / 2 pi`` in Hz."""
        omega_m = 2 * math.pi * f_m
        if (nbar is None) == (temperature is None):
            raise ValueError("give exactly one of nbar or temperature")
        if nbar is None:
            nbar = thermal_occupation(temperature, omega_m, high_temperature=high_temperature)
        return cls(omega_m, 2 * math.pi * gamma_hz, nbar)


def thermal_occupation(temperature: float, omega: float, *, high_temperature: bool = False) -> float:
    """Bose-Einstein occupation at ``temperature`` (K) for angular frequency ``omega``.

    ``high_temperature=True`` returns ``k_B T / (hbar omega)`` instead.
    """
    if temperature < 0:
        raise ValueError("temperature must be nonnegative")
    if temperature == 0:
        return 0.0
    x = HBAR * omega / (K_B * temperature)
    if high_temperature:
        return 1.0 / x
    return 1.0 / math.expm1(x)


@dataclass(frozen=True)
class ThermalSegmentStats:
    mean_map: np.ndarray
    added_noise: np.ndarray


def _rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, s], [-s, c]])


def _series(A: np.ndarray, D: np.ndarray, t: float):
    # Taylor series of exp(A t) and of the noise integral; the noise series
    # has no cancellation, so N_xx ~ t^3 stays fully accurate for tiny t.
    M = np.eye(2)
    term = np.eye(2)
    N = np.zeros((2, 2))
    nterm = D * t
    for n in range(1, 80):
        N = N + nterm
        nterm = (A @ nterm + nterm @ A.T) * (t / (n + 1))
        term = (term @ A) * (t / n)
        M = M + term
        if np.abs(term).max() <= 1e-18 * np.abs(M).max() and np.abs(nterm).max() <= 1e-18 * np.abs(N).max():
            break
    return M, N


def _closed_form(omega: float, gamma: float, sigma: float, t: float):
    w1 = math.sqrt(omega * omega - 0.25 * gamma * gamma)
    k = 0.5 * gamma / w1
    r = omega / w1
    decay = math.exp(-0.5 * gamma * t)
    c, s = math.cos(w1 * t), math.sin(w1 * t)
    M = decay * np.array([[c + k * s, r * s], [-r * s, c - k * s]])
    # e0 = int e^{-g s}; ez = int e^{(-g + 2 i w1) s}
    e0 = -math.expm1(-gamma * t) / gamma
    z = complex(-gamma, 2 * w1)
    ez = (np.exp(z * t) - 1.0) / z
    sin2 = 0.5 * (e0 - ez.real)
    cos2 = 0.5 * (e0 + ez.real)
    sincos = 0.5 * ez.imag
    amp = 2.0 * gamma * sigma
    nxx = amp * r * r * sin2
    nxp = amp * r * (sincos - k * sin2)
    npp = amp * (cos2 - 2 * k * sincos + k * k * sin2)
    return M, np.array([[nxx, nxp], [nxp, npp]])


@lru_cache(maxsize=4096)
def _segment_cached(omega: float, gamma: float, nbar: float, theta: float):
    t = theta / omega
    if gamma == 0.0:
        return _rotation(theta), np.zeros((2, 2))
    sigma = nbar + 0.5
    if (omega + gamma) * t <= 1.0:
        A = np.array([[0.0, omega], [-omega, -gamma]])
        D = np.diag([0.0, 2.0 * gamma * sigma])
        M, N = _series(A, D, t)
    else:
        M, N = _closed_form(omega, gamma, sigma, t)
    N = 0.5 * (N + N.T)
    M.setflags(write=False)
    N.setflags(write=False)
    return M, N


def segment_stats(p: OscillatorParams, theta: float) -> ThermalSegmentStats:
    """Mean map and aggregated noise covariance over rotation angle ``theta``."""
    if not theta >= 0:
        raise ValueError("theta must be nonnegative")
    M, N = _segment_cached(float(p.omega_m), float(p.gamma), float(p.nbar), float(theta))
    return ThermalSegmentStats(M, N)


def segment_stats_quadrature(p: OscillatorParams, theta: float, rtol: float = 1e-10) -> ThermalSegmentStats:
    """Reference evaluation with ``expm`` and adaptive quadrature (slow)."""
    if not theta >= 0:
        raise ValueError("theta must be nonnegative")
    t = theta / p.omega_m
    A, D = p.drift, p.diffusion
    M = expm(A * t)
    if t == 0 or p.gamma == 0:
        return ThermalSegmentStats(M, np.zeros((2, 2)))

    def integrand(s):
        E = expm(A * s)
        return E @ D @ E.T

    # split at each half period so the oscillating integrand stays resolved
    edges = np.linspace(0.0, t, max(2, int(math.ceil(theta / math.pi)) + 1))
    N = np.zeros((2, 2))
    for a, b in zip(edges[:-1], edges[1:]):
        N += quad_vec(integrand, a, b, epsrel=rtol, epsabs=0.0)[0]
    return ThermalSegmentStats(M, 0.5 * (N + N.T))


def compose_segments(first: ThermalSegmentStats, second: ThermalSegmentStats) -> ThermalSegmentStats:
    """Stats of ``first`` followed by ``second``."""
    M2 = second.mean_map
    return ThermalSegmentStats(M2 @ first.mean_map, M2 @ first.added_noise @ M2.T + second.added_noise)


def apply_free_evolution(state: SystemState, p: OscillatorParams, theta: float) -> SystemState:
    """Free damped evolution of the mechanics; light is untouched."""
    stats = segment_stats(p, theta)
    if theta == 0:
        return state
    M, N = stats.mean_map, stats.added_noise
    x, pm = state.live["X_M"], state.live["P_M"]
    new_x = x * M[0, 0] + pm * M[0, 1]
    new_p = x * M[1, 0] + pm * M[1, 1]
    registry = state.registry
    if np.any(N != 0.0):
        mode = NoiseMode.new(ModeKind.THERMAL_SEGMENT, N)
        registry = registry.append(mode)
        new_x = new_x + QuadratureForm.unit(mode, 0)
        new_p = new_p + QuadratureForm.unit(mode, 1)
    return state.evolve(registry, X_M=new_x, P_M=new_p)
