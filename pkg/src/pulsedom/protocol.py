"""Pulsed optomechanical maps and their composition.

A single pulse acts as ``exp(-i lam X_M X_L)``::

    P_L -> P_L - lam X_M,     P_M -> P_M - lam X_L

Loss is a beam splitter with intensity transmission ``eta`` mixing in fresh
vacuum. Protocols are ordered lists of steps applied left to right, so
``[Pulse(l1), Loss(eta), FreeEvolution(theta), Pulse(l2), Loss(eta)]`` is the
lossy double-pulse scheme.

Sign convention: composing the elementary maps puts ``-(l2 + l1 cos theta)``
on ``X_L`` in the final mechanical momentum (lossless), so back action is
evaded for ``l2 = -l1 cos theta``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from .dynamics import OscillatorParams, apply_free_evolution
from .gaussian import ModeKind, NoiseMode, QuadratureForm, SystemState


class AdiabaticityWarning(UserWarning):
    """Pulse parameters outside the frozen-mechanics / bad-cavity regime."""


@dataclass(frozen=True)
class PulseParams:
    """Physical pulse description; rates in rad/s, ``tau`` in seconds."""

    g0: float
    kappa: float
    tau: float
    nbar_photons: float

    def check_regime(self, omega_m: float | None = None, margin: float = 10.0) -> list[str]:
        problems = []
        if self.tau * self.kappa < margin:
            problems.append("tau is not much longer than 1/kappa")
        if omega_m is not None:
            if self.tau * omega_m > 1.0 / margin:
                problems.append("tau is not much shorter than 1/omega_m")
            if self.kappa < margin * omega_m:
                problems.append("kappa is not much larger than omega_m (resolved sidebands)")
        for msg in problems:
            warnings.warn(msg, AdiabaticityWarning, stacklevel=2)
        return problems


def lambda_from_physical(p: PulseParams) -> float:
    """Dimensionless strength ``4 (2 pi)**(1/4) sqrt(tau N g0**2 / kappa)``."""
    if not (p.g0 > 0 and p.kappa > 0 and p.tau > 0):
        raise ValueError("g0, kappa and tau must be positive")
    if not p.nbar_photons >= 0:
        raise ValueError("photon number must be nonnegative")
    return 4.0 * (2 * math.pi) ** 0.25 * math.sqrt(p.tau * p.nbar_photons * p.g0 ** 2 / p.kappa)


def photons_for_lambda(lam: float, g0: float, kappa: float, tau: float) -> float:
    """Mean photon number that gives interaction strength ``|lam|``."""
    if not (g0 > 0 and kappa > 0 and tau > 0):
        raise ValueError("g0, kappa and tau must be positive")
    return kappa * lam ** 2 / (16.0 * math.sqrt(2 * math.pi) * tau * g0 ** 2)


# -- steps ------------------------------------------------------------------


@dataclass(frozen=True)
class Pulse:
    lam: float

    def __post_init__(self):
        if not math.isfinite(self.lam):
            raise ValueError("pulse strength must be finite")


@dataclass(frozen=True)
class FreeEvolution:
    theta: float

    def __post_init__(self):
        if not self.theta >= 0:
            raise ValueError("theta must be nonnegative")


@dataclass(frozen=True)
class Loss:
    eta: float

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")


@dataclass(frozen=True)
class Displace:
    dx: float = 0.0
    dp: float = 0.0


@dataclass(frozen=True)
class Snapshot:
    name: str


ProtocolStep = Union[Pulse, FreeEvolution, Loss, Displace, Snapshot]


def apply_pulse(state: SystemState, lam: float) -> SystemState:
    if lam == 0:
        return state
    live = state.live
    return state.evolve(P_L=live["P_L"] - lam * live["X_M"], P_M=live["P_M"] - lam * live["X_L"])


def apply_loss(state: SystemState, eta: float) -> SystemState:
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    if eta == 1.0:
        return state
    vac = NoiseMode.vacuum(ModeKind.LOSS_VACUUM)
    t, r = math.sqrt(eta), math.sqrt(1.0 - eta)
    live = state.live
    return state.evolve(
        state.registry.append(vac),
        X_L=t * live["X_L"] + r * QuadratureForm.unit(vac, 0),
        P_L=t * live["P_L"] + r * QuadratureForm.unit(vac, 1),
    )


def apply_displacement(state: SystemState, dx: float = 0.0, dp: float = 0.0) -> SystemState:
    live = state.live
    return state.evolve(X_M=live["X_M"] + dx, P_M=live["P_M"] + dp)


def apply_step(state: SystemState, step: ProtocolStep, osc: OscillatorParams | None = None) -> SystemState:
    if isinstance(step, Pulse):
        return apply_pulse(state, step.lam)
    if isinstance(step, Loss):
        return apply_loss(state, step.eta)
    if isinstance(step, FreeEvolution):
        if step.theta == 0:
            return state
        if osc is None:
            raise ValueError("free evolution needs oscillator parameters")
        return apply_free_evolution(state, osc, step.theta)
    if isinstance(step, Displace):
        return apply_displacement(state, step.dx, step.dp)
    if isinstance(step, Snapshot):
        return state.snapshot(step.name)
    raise TypeError(f"unknown protocol step {step!r}")


def run_protocol(steps: Iterable[ProtocolStep], osc: OscillatorParams | None = None,
                 state: SystemState | None = None) -> SystemState:
    """Apply ``steps`` in order to ``state`` (default: thermal state of ``osc``)."""
    if state is None:
        state = SystemState.thermal(osc.nbar) if osc is not None else SystemState.initial()
    for step in steps:
        state = apply_step(state, step, osc)
    return state


def double_pulse(lambda1: float, lambda2: float, theta: float, eta: float = 1.0) -> list[ProtocolStep]:
    steps: list[ProtocolStep] = [Pulse(lambda1)]
    if eta != 1.0:
        steps.append(Loss(eta))
    steps += [FreeEvolution(theta), Pulse(lambda2)]
    if eta != 1.0:
        steps.append(Loss(eta))
    return steps


def single_pulse_prior(lam: float, phi: float, eta: float = 1.0) -> list[ProtocolStep]:
    """Wait, then measure: reads out the initial quadrature at angle ``phi``."""
    theta = phi % math.pi
    steps: list[ProtocolStep] = [FreeEvolution(theta), Pulse(lam)]
    if eta != 1.0:
        steps.append(Loss(eta))
    return steps


def single_pulse_posterior(lam: float, phi: float, eta: float = 1.0) -> list[ProtocolStep]:
    """Measure, then wait until the squeezed position has rotated to angle ``phi``."""
    theta = (-phi) % math.pi
    steps: list[ProtocolStep] = [Pulse(lam)]
    if eta != 1.0:
        steps.append(Loss(eta))
    steps.append(FreeEvolution(theta))
    return steps


# -- analytic effective interaction -----------------------------------------


@dataclass(frozen=True)
class EffectiveInteraction:
    G: float
    phi: float
    kerr: float
    defined: bool = True


def effective_interaction(lambda1: float, lambda2: float, theta: float, eta: float = 1.0) -> EffectiveInteraction:
    """Strength and angle of the single effective ``X_L X_M^phi`` coupling.

    With ``eta < 1`` (loss after each pass) the measured quadrature is
    ``tan phi = l2 sin(theta) / (l2 cos(theta) + sqrt(eta) l1)`` and
    ``G**2 = eta**2 l1**2 + eta l2**2 + 2 eta**1.5 l1 l2 cos(theta)``;
    ``eta = 1`` gives the lossless expressions. ``kerr`` is the coefficient of
    ``X_L`` in the output phase quadrature, ``sqrt(eta) l1 l2 sin(theta)``.
    """
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    se = math.sqrt(eta)
    # components of G X^phi on (X_M, P_M)
    gx = eta * lambda1 + se * lambda2 * math.cos(theta)
    gp = se * lambda2 * math.sin(theta)
    G = math.hypot(gx, gp)
    kerr = se * lambda1 * lambda2 * math.sin(theta)
    if G == 0.0:
        return EffectiveInteraction(0.0, math.nan, kerr, defined=False)
    phi = math.atan2(gp, gx)
    if phi == -math.pi:
        phi = math.pi
    return EffectiveInteraction(G, phi, kerr)


def backaction_evading_lambda2(lambda1: float, theta: float, eta: float = 1.0) -> float:
    """Second-pulse strength cancelling ``X_L`` in the final momentum.

    The composed coefficient is ``-(l1 cos(theta) + sqrt(eta) l2)``.
    """
    if not 0.0 < eta <= 1.0:
        raise ValueError("eta must lie in (0, 1]")
    return -lambda1 * math.cos(theta) / math.sqrt(eta)


def symplectic_form(n_modes: int = 2) -> np.ndarray:
    j = np.array([[0.0, 1.0], [-1.0, 0.0]])
    return np.kron(np.eye(n_modes), j)


# -- serialization ----------------------------------------------------------

_STEP_TYPES = {
    "pulse": (Pulse, {"lambda": "lam"}),
    "free_evolution": (FreeEvolution, {"theta_rad": "theta"}),
    "loss": (Loss, {"eta": "eta"}),
    "displace": (Displace, {"dx": "dx", "dp": "dp"}),
    "snapshot": (Snapshot, {"name": "name"}),
}


def step_to_record(step: ProtocolStep) -> dict:
    for kind, (cls, fields) in _STEP_TYPES.items():
        if type(step) is cls:
            values = asdict(step)
            return {"step": kind, **{doc: values[attr] for doc, attr in fields.items()}}
    raise TypeError(f"unknown protocol step {step!r}")


def step_from_record(record: dict) -> ProtocolStep:
    kind = record.get("step")
    if kind not in _STEP_TYPES:
        raise ValueError(f"unknown step type {kind!r}; expected one of {sorted(_STEP_TYPES)}")
    cls, fields = _STEP_TYPES[kind]
    extra = set(record) - set(fields) - {"step"}
    if extra:
        raise ValueError(f"unexpected fields for {kind}: {sorted(extra)}")
    return cls(**{attr: record[doc] for doc, attr in fields.items() if doc in record})


def dumps_protocol(steps: Sequence[ProtocolStep]) -> str:
    return json.dumps({"steps": [step_to_record(s) for s in steps]}, indent=2)


def loads_protocol(text: str) -> list[ProtocolStep]:
    doc = json.loads(text)
    return [step_from_record(r) for r in doc["steps"]]
