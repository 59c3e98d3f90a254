"""Scenario configuration, figure tables, force sensitivity and sweeps.

SI quantities live only here. A dimensionless momentum ``P`` corresponds to
a physical momentum ``sqrt(hbar m omega_m) * P``.
"""

from __future__ import annotations

import copy
import csv
import io
import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Iterable, Sequence

import numpy as np

from .dynamics import HBAR, OscillatorParams, thermal_occupation
from .gaussian import conditional_covariance
from .optimize import Budget, allocate_pulses, evaluate_protocol, single_pulse_value
from .protocol import (
    PulseParams,
    double_pulse,
    effective_interaction,
    lambda_from_physical,
    single_pulse_posterior,
    single_pulse_prior,
)

TWO_PI = 2.0 * math.pi


class ConfigError(ValueError):
    pass


class MissingMassError(ConfigError):
    pass


# -- configuration ------------------------------------------------------------


@dataclass
class OscillatorConfig:
    omega_m_hz: float = 1e3
    gamma_hz: float = 1.0
    temperature_k: float | None = 100.0
    nbar: float | None = None
    mass_kg: float | None = None
    high_temperature: bool = False


@dataclass
class OpticsConfig:
    g0_hz: float = 1.0
    kappa_hz: float = 1e9
    tau_s: float = 1e-9
    photons: float | None = None
    lambda_total: float | None = 1.0


@dataclass
class ProtocolConfig:
    scheme: str = "double"
    conditioning: str = "prior"
    phi_rad: float = math.pi / 2
    eta: float = 1.0
    theta_rad: float | None = None
    theta_min_rad: float = 1e-6
    theta_max_rad: float = math.pi / 2


@dataclass
class Axis:
    variable: str = "lambda_total"
    start: float = 0.1
    stop: float = 1000.0
    points: int = 25
    scale: str = "log"

    def values(self) -> np.ndarray:
        if self.points == 1:
            return np.array([float(self.start)])
        # descending ranges are the ascending grid reversed, point for point
        lo, hi = sorted((float(self.start), float(self.stop)))
        grid = np.geomspace(lo, hi, self.points) if self.scale == "log" else np.linspace(lo, hi, self.points)
        return grid if self.start <= self.stop else grid[::-1]


@dataclass
class SweepConfig:
    observable: str = "conditional_variance"
    axes: list[Axis] = field(default_factory=lambda: [Axis()])


@dataclass
class FigureConfig:
    phis_rad: list[float] = field(default_factory=lambda: [math.pi / 2, math.pi / 4, math.pi / 8])
    lambda_axis: Axis = field(default_factory=Axis)
    angle_lambdas: list[float] = field(default_factory=lambda: [60.0, 6.0, 0.6])
    angle_points: int = 32
    temperatures_k: list[float] = field(default_factory=lambda: [1.0, 10.0, 100.0])


@dataclass
class OutputConfig:
    path: str | None = None
    format: str = "csv"


@dataclass
class ScenarioConfig:
    oscillator: OscillatorConfig = field(default_factory=OscillatorConfig)
    optics: OpticsConfig = field(default_factory=OpticsConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    figures: FigureConfig = field(default_factory=FigureConfig)
    outputs: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0

    def validate(self) -> "ScenarioConfig":
        o, op, p = self.oscillator, self.optics, self.protocol
        if (o.temperature_k is None) == (o.nbar is None):
            raise ConfigError("oscillator: give exactly one of temperature_k or nbar")
        if (op.photons is None) == (op.lambda_total is None):
            raise ConfigError("optics: give exactly one of photons or lambda_total")
        if not o.omega_m_hz > 0:
            raise ConfigError("oscillator.omega_m_hz must be positive")
        if not o.gamma_hz >= 0:
            raise ConfigError("oscillator.gamma_hz must be nonnegative")
        if o.temperature_k is not None and o.temperature_k < 0:
            raise ConfigError("oscillator.temperature_k must be nonnegative")
        if o.nbar is not None and o.nbar < 0:
            raise ConfigError("oscillator.nbar must be nonnegative")
        if o.mass_kg is not None and not o.mass_kg > 0:
            raise ConfigError("oscillator.mass_kg must be positive")
        if p.scheme not in ("single", "double"):
            raise ConfigError("protocol.scheme must be 'single' or 'double'")
        if p.conditioning not in ("prior", "posterior"):
            raise ConfigError("protocol.conditioning must be 'prior' or 'posterior'")
        if not 0.0 < p.eta <= 1.0:
            raise ConfigError("protocol.eta must lie in (0, 1]")
        if p.theta_rad is not None and not p.theta_rad > 0:
            raise ConfigError("protocol.theta_rad must be positive")
        if not 0 < p.theta_min_rad <= p.theta_max_rad:
            raise ConfigError("protocol: need 0 < theta_min_rad <= theta_max_rad")
        for i, ax in enumerate([*self.sweep.axes, self.figures.lambda_axis]):
            if ax.points < 1:
                raise ConfigError(f"sweep axis {i}: points must be >= 1")
            if ax.scale not in ("log", "linear"):
                raise ConfigError(f"sweep axis {i}: scale must be 'log' or 'linear'")
            if ax.scale == "log" and not (ax.start > 0 and ax.stop > 0):
                raise ConfigError(f"sweep axis {i}: log range must be positive")
        if not 1 <= len(self.sweep.axes) <= 2:
            raise ConfigError("sweep: one or two axes")
        if self.outputs.format not in ("csv", "structured-text"):
            raise ConfigError("outputs.format must be 'csv' or 'structured-text'")
        return self

    # derived physical objects

    def oscillator_params(self) -> OscillatorParams:
        o = self.oscillator
        return OscillatorParams.from_hz(o.omega_m_hz, o.gamma_hz, nbar=o.nbar, temperature=o.temperature_k,
                                        high_temperature=o.high_temperature)

    def lambda_total(self) -> float:
        op = self.optics
        if op.lambda_total is not None:
            return float(op.lambda_total)
        return lambda_from_physical(PulseParams(TWO_PI * op.g0_hz, TWO_PI * op.kappa_hz, op.tau_s, op.photons))

    def with_value(self, variable: str, value: float) -> "ScenarioConfig":
        """Copy with one scalar parameter replaced (sweep variables)."""
        cfg = copy.deepcopy(self)
        if variable == "lambda_total":
            cfg.optics.lambda_total, cfg.optics.photons = value, None
        elif variable == "photons":
            cfg.optics.photons, cfg.optics.lambda_total = value, None
        elif variable == "temperature_k":
            cfg.oscillator.temperature_k, cfg.oscillator.nbar = value, None
        elif variable == "nbar":
            cfg.oscillator.nbar, cfg.oscillator.temperature_k = value, None
        elif variable in ("omega_m_hz", "gamma_hz", "mass_kg"):
            setattr(cfg.oscillator, variable, value)
        elif variable in ("theta_rad", "eta", "phi_rad"):
            setattr(cfg.protocol, variable, value)
        else:
            raise ConfigError(f"unknown sweep variable {variable!r}; valid: {sorted(SWEEP_VARIABLES)}")
        return cfg


SWEEP_VARIABLES = {"lambda_total", "photons", "temperature_k", "nbar", "omega_m_hz", "gamma_hz", "mass_kg",
                   "theta_rad", "eta", "phi_rad"}


def _from_dict(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a table")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        path = f"{where}.{name}" if where else name
        default = getattr(cls(), name)
        if isinstance(default, list) and default and isinstance(default[0], Axis):
            kwargs[name] = [_from_dict(Axis, v, f"{path}[{i}]") for i, v in enumerate(value)]
        elif hasattr(default, "__dataclass_fields__"):
            kwargs[name] = _from_dict(type(default), value, path)
        else:
            kwargs[name] = _coerce(value, default, path)
    return cls(**kwargs)


def _coerce(value, default, path):
    if value is None:
        return None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false")
        return value
    if isinstance(default, int) and not isinstance(default, bool) and path.endswith(("points", "seed")):
        if isinstance(value, bool) or int(value) != value:
            raise ConfigError(f"{path}: expected an integer")
        return int(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        return [float(v) for v in value]
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected a number, got {value!r}") from None


def config_from_dict(data: dict) -> ScenarioConfig:
    return _from_dict(ScenarioConfig, data, "").validate()


def config_to_dict(cfg: ScenarioConfig) -> dict:
    return asdict(cfg)


def loads_config(text: str) -> ScenarioConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return config_from_dict(data)


def dumps_config(cfg: ScenarioConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True)


def load_config(path) -> ScenarioConfig:
    with open(path) as fh:
        return loads_config(fh.read())


# -- presets --------------------------------------------------------------------

FORCE_THETA = TWO_PI / 50


def inferred_mass_kg(force_n: float = 8e-12, wait_s: float = 200e-9, momentum_var: float = 100.0,
                     omega_m: float = TWO_PI * 1e5) -> float:
    """Mass that turns a dimensionless momentum variance into a given impulse force.

    Solves ``force = sqrt(hbar m omega_m momentum_var) / wait`` for ``m``.
    The defaults (8 pN over 200 ns, variance 100 at 100 kHz) are the quoted
    thermally limited double-pulse sensitivity; the result is about 0.39 ug.
    """
    return (force_n * wait_s) ** 2 / (HBAR * omega_m * momentum_var)


def preset(name: str) -> ScenarioConfig:
    """Named parameter sets.

    ``fig2-caption``: 1 kHz, gamma/2pi = 1 Hz, 100 K (figure caption values).
    ``fig2-text``: 100 kHz, gamma/2pi = 1 Hz, 1 K (main-text values).
    ``fig3``: 100 kHz, gamma/2pi = 1 Hz, a posteriori momentum, delay of one
    fiftieth of a period, temperatures 1/10/100 K.
    ``force-inferred-mass``: ``fig3`` at 100 K with the back-solved mass of
    :func:`inferred_mass_kg`. The mass is an inferred value, not a measured one.
    """
    base = ScenarioConfig()
    if name == "fig2-caption":
        cfg = base
    elif name == "fig2-text":
        cfg = replace(base, oscillator=OscillatorConfig(omega_m_hz=1e5, gamma_hz=1.0, temperature_k=1.0))
    elif name in ("fig3", "force-inferred-mass"):
        cfg = replace(
            base,
            oscillator=OscillatorConfig(omega_m_hz=1e5, gamma_hz=1.0, temperature_k=100.0),
            protocol=ProtocolConfig(conditioning="posterior", phi_rad=math.pi / 2, theta_rad=FORCE_THETA),
            figures=FigureConfig(lambda_axis=Axis("lambda_total", 0.1, 100.0, 31, "log")),
        )
        if name == "force-inferred-mass":
            cfg.oscillator.mass_kg = inferred_mass_kg()
    else:
        raise ConfigError(f"unknown preset {name!r}; valid: {PRESETS}")
    return cfg.validate()


PRESETS = ("fig2-caption", "fig2-text", "fig3", "force-inferred-mass")


# -- evaluation -------------------------------------------------------------------


@dataclass
class Evaluation:
    scheme: str
    phi: float
    lambda_total: float
    lambda1: float
    lambda2: float
    theta: float
    homodyne_angle: float
    conditional_variance: float
    steps: list = field(default_factory=list)
    state: Any = None


def _theta_spec(p: ProtocolConfig):
    return p.theta_rad if p.theta_rad is not None else (p.theta_min_rad, p.theta_max_rad)


def evaluate(cfg: ScenarioConfig, scheme: str | None = None, phi: float | None = None,
             lambda_total: float | None = None, keep_state: bool = False) -> Evaluation:
    """Conditional variance of one scheme at one operating point."""
    scheme = scheme or cfg.protocol.scheme
    phi = cfg.protocol.phi_rad if phi is None else phi
    lam = cfg.lambda_total() if lambda_total is None else lambda_total
    osc = cfg.oscillator_params()
    eta = cfg.protocol.eta
    posterior = cfg.protocol.conditioning == "posterior"
    if scheme == "double":
        res = allocate_pulses(Budget(lam), phi, _theta_spec(cfg.protocol), eta, osc, posterior=posterior)
        l1, l2, th = res.allocation
        angle, value = res.homodyne_angle, res.best_value
        steps = double_pulse(l1, l2, th, eta)
    else:
        if posterior:
            th, l1, l2 = (-phi) % math.pi, lam, 0.0
            steps = single_pulse_posterior(lam, phi, eta)
        else:
            th, l1, l2 = phi % math.pi, 0.0, lam
            steps = single_pulse_prior(lam, phi, eta)
        angle, value = None, None
    state = None
    if keep_state or value is None:
        state, angle, value = evaluate_protocol(steps, osc, phi, posterior)
    return Evaluation(scheme, phi, lam, l1, l2, th, angle, value, steps, state)


def figure2(cfg: ScenarioConfig) -> list[dict]:
    """A priori conditional variance: vs budget at fixed angles (panel a) and
    vs mechanical angle at fixed budgets (panels b-d)."""
    cfg = copy.deepcopy(cfg)
    cfg.protocol.conditioning = "prior"
    rows = []
    lambdas = cfg.figures.lambda_axis.values()
    for phi in cfg.figures.phis_rad:
        for lam in lambdas:
            for scheme in ("single", "double"):
                rows.append(_row("a", evaluate(cfg, scheme, phi, lam)))
    angles = np.arange(cfg.figures.angle_points) * (math.pi / cfg.figures.angle_points)
    for panel, lam in zip("bcdefgh", cfg.figures.angle_lambdas):
        for phi in angles:
            for scheme in ("single", "double"):
                rows.append(_row(panel, evaluate(cfg, scheme, float(phi), lam)))
    return rows


def figure3(cfg: ScenarioConfig) -> list[dict]:
    """A posteriori conditional variance of the final momentum vs budget."""
    rows = []
    lambdas = cfg.figures.lambda_axis.values()
    for temp in cfg.figures.temperatures_k:
        c = cfg.with_value("temperature_k", temp)
        c.protocol.conditioning = "posterior"
        for lam in lambdas:
            for scheme in ("single", "double"):
                ev = evaluate(c, scheme, math.pi / 2, lam)
                row = {"temperature_k": temp, "nbar": c.oscillator_params().nbar}
                row.update(_row("", ev))
                del row["panel"]
                rows.append(row)
    return rows


def _row(panel: str, ev: Evaluation) -> dict:
    return {
        "panel": panel,
        "scheme": ev.scheme,
        "phi_rad": ev.phi,
        "lambda_total": ev.lambda_total,
        "lambda1": ev.lambda1,
        "lambda2": ev.lambda2,
        "theta_rad": ev.theta,
        "homodyne_angle_rad": ev.homodyne_angle,
        "conditional_variance": ev.conditional_variance,
    }


@dataclass
class ForceReport:
    scheme: str
    wait_time_s: float
    theta_rad: float
    conditional_variance: float
    momentum_std: float
    momentum_std_si: float
    force_n: float

    def as_row(self) -> dict:
        return {
            "scheme": self.scheme,
            "wait_time_s": self.wait_time_s,
            "theta_rad": self.theta_rad,
            "conditional_variance": self.conditional_variance,
            "momentum_std": self.momentum_std,
            "momentum_std_kg_m_per_s": self.momentum_std_si,
            "force_N": self.force_n,
        }


def force_sensitivity(cfg: ScenarioConfig) -> tuple[ForceReport, ForceReport]:
    """Thermally limited impulse-force sensitivity of both schemes.

    The single scheme measures and then waits a quarter period; the double
    scheme's wait is its inter-pulse delay. Force = SI momentum standard
    deviation / wait time.
    """
    mass = cfg.oscillator.mass_kg
    if mass is None:
        raise MissingMassError(
            "oscillator.mass_kg is required for SI force output: the reference parameter set does not "
            "state the oscillator mass (the preset 'force-inferred-mass' carries a back-solved value)"
        )
    c = copy.deepcopy(cfg)
    c.protocol.conditioning = "posterior"
    osc = c.oscillator_params()
    p_unit = math.sqrt(HBAR * mass * osc.omega_m)
    reports = []
    for scheme in ("single", "double"):
        ev = evaluate(c, scheme, math.pi / 2)
        wait = ev.theta / osc.omega_m
        std = math.sqrt(ev.conditional_variance)
        reports.append(ForceReport(scheme, wait, ev.theta, ev.conditional_variance, std, std * p_unit,
                                   std * p_unit / wait))
    return reports[0], reports[1]


# -- sweeps -----------------------------------------------------------------------

OBSERVABLES = ("conditional_variance", "homodyne_angle", "G", "phi_eff", "kerr", "det_sigma",
               "lambda1", "lambda2", "theta")


def observe(cfg: ScenarioConfig, observable: str) -> float:
    if observable not in OBSERVABLES:
        raise ConfigError(f"unknown observable {observable!r}; valid: {list(OBSERVABLES)}")
    ev = evaluate(cfg, keep_state=observable == "det_sigma")
    if observable in ("G", "phi_eff", "kerr"):
        eff = effective_interaction(ev.lambda1, ev.lambda2, ev.theta, cfg.protocol.eta)
        return {"G": eff.G, "phi_eff": eff.phi, "kerr": eff.kerr}[observable]
    if observable == "det_sigma":
        st = ev.state
        sigma = conditional_covariance([st.live["X_M"], st.live["P_M"]], st.optical_quadrature(ev.homodyne_angle),
                                       st.registry)
        return float(np.linalg.det(sigma))
    return float({
        "conditional_variance": ev.conditional_variance,
        "homodyne_angle": ev.homodyne_angle,
        "lambda1": ev.lambda1,
        "lambda2": ev.lambda2,
        "theta": ev.theta,
    }[observable])


def sweep(cfg: ScenarioConfig, workers: int = 1) -> list[dict]:
    """Evaluate ``cfg.sweep.observable`` over a 1-D or 2-D grid (first axis outermost).

    Points are independent; ``workers > 1`` evaluates them in a thread pool.
    Rows always come back in grid order.
    """
    obs = cfg.sweep.observable
    if obs not in OBSERVABLES:
        raise ConfigError(f"unknown observable {obs!r}; valid: {list(OBSERVABLES)}")
    axes = cfg.sweep.axes
    for ax in axes:
        if ax.variable not in SWEEP_VARIABLES:
            raise ConfigError(f"unknown sweep variable {ax.variable!r}; valid: {sorted(SWEEP_VARIABLES)}")
    grids = [ax.values() for ax in axes]
    points = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, len(axes))

    def one(point):
        c = cfg
        row = {}
        for ax, v in zip(axes, point):
            c = c.with_value(ax.variable, float(v))
            row[ax.variable] = float(v)
        row[obs] = observe(c, obs)
        return row

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, points))
    return [one(pt) for pt in points]


# -- oracle cross-check suite ------------------------------------------------------

_SUITE_OSCILLATORS = (
    (1e3, 1.0, 100.0),
    (1e5, 1.0, 1.0),
    (1e5, 1.0, 10.0),
    (1e5, 1.0, 100.0),
)
_SUITE_PHIS = (math.pi / 2, math.pi / 4, math.pi / 8, 3 * math.pi / 4, 0.3)
_SUITE_LAMBDAS = (0.6, 1.0, 6.0, 60.0)
_SUITE_ETAS = (1.0, 0.8)


def oracle_suite(n_cases: int = 100, seed: int = 20240) -> list[ScenarioConfig]:
    """Deterministic sample of operating points across both figure parameter sets."""
    grid = list(itertools.product(_SUITE_OSCILLATORS, ("single", "double"), ("prior", "posterior"),
                                  _SUITE_PHIS, _SUITE_LAMBDAS, _SUITE_ETAS))
    if not 1 <= n_cases <= len(grid):
        raise ValueError(f"n_cases must lie in [1, {len(grid)}]")
    pick = np.sort(np.random.default_rng(seed).choice(len(grid), size=n_cases, replace=False))
    cases = []
    for k, i in enumerate(pick):
        (f, g, temp), scheme, cond, phi, lam, eta = grid[i]
        cases.append(ScenarioConfig(
            oscillator=OscillatorConfig(omega_m_hz=f, gamma_hz=g, temperature_k=temp),
            optics=OpticsConfig(lambda_total=lam),
            protocol=ProtocolConfig(scheme=scheme, conditioning=cond, phi_rad=phi, eta=eta),
            seed=1000 + k,
        ).validate())
    return cases


def oracle_compare(cfg: ScenarioConfig, n_paths: int = 100_000, seed: int | None = None) -> dict:
    """Engine vs trajectory-ensemble conditional variance at one operating point."""
    from .oracle import TrajectoryConfig, simulate_ensemble

    ev = evaluate(cfg)
    osc = cfg.oscillator_params()
    seed = cfg.seed if seed is None else seed
    ens = simulate_ensemble(ev.steps, osc, TrajectoryConfig(n_paths=n_paths, seed=seed))
    pre = "" if cfg.protocol.conditioning == "posterior" else "initial."
    target = {pre + "X_M": math.cos(ev.phi), pre + "P_M": math.sin(ev.phi)}
    meter = {"X_L": math.cos(ev.homodyne_angle), "P_L": math.sin(ev.homodyne_angle)}
    mc, se = ens.conditional_variance(target, meter)
    return {
        "omega_m_hz": cfg.oscillator.omega_m_hz,
        "temperature_k": cfg.oscillator.temperature_k,
        "scheme": ev.scheme,
        "conditioning": cfg.protocol.conditioning,
        "phi_rad": ev.phi,
        "lambda_total": ev.lambda_total,
        "eta": cfg.protocol.eta,
        "theta_rad": ev.theta,
        "homodyne_angle_rad": ev.homodyne_angle,
        "engine_variance": ev.conditional_variance,
        "oracle_variance": mc,
        "oracle_std_error": se,
        "z_score": (mc - ev.conditional_variance) / se,
    }


# -- output ------------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def rows_to_csv(rows: Sequence[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    header = list(rows[0])
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(r[k]) for k in header])
    return buf.getvalue()


def rows_to_text(rows: Sequence[dict], meta: dict | None = None) -> str:
    def clean(v):
        return float(v) if isinstance(v, np.floating) else v

    doc = {"meta": meta or {}, "columns": list(rows[0]) if rows else [],
           "rows": [[clean(r[k]) for k in r] for r in rows]}
    return json.dumps(doc, indent=1) + "\n"


def write_rows(rows: Sequence[dict], fmt: str, path=None, meta: dict | None = None) -> str:
    text = rows_to_csv(rows) if fmt == "csv" else rows_to_text(rows, meta)
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
