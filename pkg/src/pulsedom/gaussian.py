"""Linear quadrature forms over an explicit basis of independent Gaussian noise modes.

Every operator the simulator tracks is a real linear combination of
zero-mean noise variables plus a deterministic offset. Each noise mode is
independent of all the others and carries its own symmetrized second-moment
block, so any covariance is a sum of per-mode quadratic forms. Units are
dimensionless quadratures with the ground state at variance 1/2.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

#: meters with variance below this are treated as deterministic
DEGENERATE_METER_TOL = 1e-12

_mode_ids = itertools.count(1)


class StructuralError(KeyError):
    """A form references a noise mode missing from the registry."""


class DegenerateMeasurementError(ValueError):
    """The conditioning variable has (numerically) zero variance."""


class ModeKind(enum.Enum):
    INITIAL_MECH = "InitialMech"
    INITIAL_LIGHT = "InitialLight"
    LOSS_VACUUM = "LossVacuum"
    THERMAL_SEGMENT = "ThermalSegment"


@dataclass(frozen=True, eq=False)
class NoiseMode:
    id: int
    kind: ModeKind
    second_moments: np.ndarray

    def __post_init__(self):
        sm = np.array(self.second_moments, dtype=float)
        if sm.ndim == 0:
            sm = sm.reshape(1, 1)
        if sm.shape not in ((1, 1), (2, 2)):
            raise ValueError(f"second_moments must be 1x1 or 2x2, got {sm.shape}")
        if not np.all(np.isfinite(sm)):
            raise ValueError("second_moments must be finite")
        if not np.allclose(sm, sm.T, rtol=1e-12, atol=0.0):
            raise ValueError("second_moments must be symmetric")
        scale = max(float(np.abs(sm).max()), 1.0)
        if np.linalg.eigvalsh(sm).min() < -1e-12 * scale:
            raise ValueError("second_moments must be positive semidefinite")
        sm = 0.5 * (sm + sm.T)
        sm.setflags(write=False)
        object.__setattr__(self, "second_moments", sm)

    @property
    def dim(self) -> int:
        return self.second_moments.shape[0]

    @classmethod
    def new(cls, kind: ModeKind, second_moments) -> "NoiseMode":
        return cls(next(_mode_ids), kind, second_moments)

    @classmethod
    def vacuum(cls, kind: ModeKind = ModeKind.LOSS_VACUUM) -> "NoiseMode":
        return cls.new(kind, 0.5 * np.eye(2))


class Registry:
    """Append-only ordered collection of noise modes.

    ``append`` returns a new registry; existing modes are shared, never
    modified.
    """

    __slots__ = ("_modes", "_order")

    def __init__(self, modes: Iterable[NoiseMode] = ()):
        self._modes: dict[int, NoiseMode] = {}
        for m in modes:
            if m.id in self._modes:
                raise ValueError(f"duplicate mode id {m.id}")
            self._modes[m.id] = m
        self._order = tuple(self._modes)

    def append(self, *modes: NoiseMode) -> "Registry":
        return Registry(itertools.chain(self, modes))

    def __getitem__(self, mode_id: int) -> NoiseMode:
        try:
            return self._modes[mode_id]
        except KeyError:
            raise StructuralError(f"noise mode {mode_id} not in registry") from None

    def __contains__(self, mode_id) -> bool:
        return mode_id in self._modes

    def __iter__(self):
        return (self._modes[i] for i in self._order)

    def __len__(self):
        return len(self._order)

    def ids(self) -> tuple[int, ...]:
        return self._order

    def __repr__(self):
        kinds = ", ".join(m.kind.value for m in self)
        return f"Registry([{kinds}])"


Key = tuple[int, int]


@dataclass(frozen=True, eq=False)
class QuadratureForm:
    """Sum of ``coeff * mode[index]`` terms plus a deterministic offset."""

    coeffs: Mapping[Key, float] = field(default_factory=dict)
    offset: float = 0.0

    def __post_init__(self):
        clean = {}
        for (mid, idx), c in dict(self.coeffs).items():
            c = float(c)
            if not np.isfinite(c):
                raise ValueError("form coefficients must be finite")
            if c != 0.0:
                clean[(int(mid), int(idx))] = c
        object.__setattr__(self, "coeffs", MappingProxyType(clean))
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def unit(cls, mode: NoiseMode | int, index: int = 0) -> "QuadratureForm":
        mid = mode.id if isinstance(mode, NoiseMode) else int(mode)
        return cls({(mid, index): 1.0})

    @classmethod
    def constant(cls, value: float) -> "QuadratureForm":
        return cls({}, value)

    def coefficient(self, mode: NoiseMode | int, index: int = 0) -> float:
        mid = mode.id if isinstance(mode, NoiseMode) else int(mode)
        return self.coeffs.get((mid, index), 0.0)

    def mode_ids(self) -> set[int]:
        return {mid for mid, _ in self.coeffs}

    def __add__(self, other):
        if isinstance(other, (int, float, np.floating)):
            return QuadratureForm(self.coeffs, self.offset + float(other))
        if not isinstance(other, QuadratureForm):
            return NotImplemented
        out = dict(self.coeffs)
        for k, c in other.coeffs.items():
            out[k] = out.get(k, 0.0) + c
        return QuadratureForm(out, self.offset + other.offset)

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, k):
        if not isinstance(k, (int, float, np.floating)):
            return NotImplemented
        k = float(k)
        return QuadratureForm({key: k * c for key, c in self.coeffs.items()}, k * self.offset)

    __rmul__ = __mul__

    def __truediv__(self, k):
        return self * (1.0 / float(k))

    def allclose(self, other: "QuadratureForm", atol: float = 1e-12) -> bool:
        keys = set(self.coeffs) | set(other.coeffs)
        diffs = [abs(self.coeffs.get(k, 0.0) - other.coeffs.get(k, 0.0)) for k in keys]
        return max(diffs, default=0.0) <= atol and abs(self.offset - other.offset) <= atol

    def __repr__(self):
        terms = " ".join(f"{c:+.6g}*m{mid}[{idx}]" for (mid, idx), c in sorted(self.coeffs.items()))
        return f"QuadratureForm({terms or '0'}; offset={self.offset:.6g})"


def _check(f: QuadratureForm, reg: Registry):
    for mid, idx in f.coeffs:
        mode = reg[mid]
        if idx >= mode.dim:
            raise StructuralError(f"index {idx} out of range for mode {mid} (dim {mode.dim})")


def covariance(f: QuadratureForm, g: QuadratureForm, reg: Registry) -> float:
    """Symmetrized covariance ``(<fg + gf>)/2 - <f><g>``."""
    _check(f, reg)
    _check(g, reg)
    total = 0.0
    for mid in f.mode_ids() & g.mode_ids():
        sm = reg[mid].second_moments
        cf = np.array([f.coeffs.get((mid, i), 0.0) for i in range(sm.shape[0])])
        cg = np.array([g.coeffs.get((mid, i), 0.0) for i in range(sm.shape[0])])
        total += float(cf @ sm @ cg)
    return total


def variance(f: QuadratureForm, reg: Registry) -> float:
    return max(covariance(f, f, reg), 0.0)


def mean(f: QuadratureForm) -> float:
    return f.offset


def coefficient_matrix(forms: Sequence[QuadratureForm], reg: Registry):
    """Dense coefficients of ``forms`` over the modes they touch.

    Returns ``(A, Sigma)`` with ``A @ Sigma @ A.T`` the covariance matrix.
    """
    for f in forms:
        _check(f, reg)
    ids = sorted(set().union(*(f.mode_ids() for f in forms)), key=reg.ids().index)
    cols, blocks = {}, []
    n = 0
    for mid in ids:
        mode = reg[mid]
        for i in range(mode.dim):
            cols[(mid, i)] = n + i
        blocks.append((n, mode.second_moments))
        n += mode.dim
    A = np.zeros((len(forms), n))
    for r, f in enumerate(forms):
        for key, c in f.coeffs.items():
            A[r, cols[key]] = c
    sigma = np.zeros((n, n))
    for start, sm in blocks:
        d = sm.shape[0]
        sigma[start:start + d, start:start + d] = sm
    return A, sigma


def covariance_matrix(forms: Sequence[QuadratureForm], reg: Registry) -> np.ndarray:
    A, sigma = coefficient_matrix(forms, reg)
    cov = A @ sigma @ A.T
    return 0.5 * (cov + cov.T)


def conditional_variance(a: QuadratureForm, b: QuadratureForm, reg: Registry) -> float:
    """``V(a|b) = V(a) - C(a, b)**2 / V(b)``.

    Evaluated as the variance of the regression residual ``a - beta b``,
    which stays accurate when ``V(a)`` is many orders above the result.
    """
    vb = variance(b, reg)
    if vb < DEGENERATE_METER_TOL:
        raise DegenerateMeasurementError(f"meter variance {vb:.3g} below {DEGENERATE_METER_TOL:g}")
    beta = covariance(a, b, reg) / vb
    return min(variance(a - b * beta, reg), variance(a, reg))


def conditional_covariance(targets: Sequence[QuadratureForm], b: QuadratureForm, reg: Registry) -> np.ndarray:
    """Covariance of ``targets`` after conditioning on a single outcome of ``b``."""
    vb = variance(b, reg)
    if vb < DEGENERATE_METER_TOL:
        raise DegenerateMeasurementError(f"meter variance {vb:.3g} below {DEGENERATE_METER_TOL:g}")
    residuals = [t - b * (covariance(t, b, reg) / vb) for t in targets]
    return covariance_matrix(residuals, reg)


def whitened_rows(forms: Sequence[QuadratureForm], reg: Registry) -> np.ndarray:
    """Rows ``w_i`` with ``w_i . w_j = C(f_i, f_j)``."""
    A, sigma = coefficient_matrix(forms, reg)
    w, v = np.linalg.eigh(sigma)
    return A @ (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def rotate_pair(x: QuadratureForm, p: QuadratureForm, angle: float):
    """Phase-space rotation ``(x cos + p sin, p cos - x sin)``."""
    c, s = np.cos(angle), np.sin(angle)
    return x * c + p * s, p * c - x * s


def quadrature_at_angle(x: QuadratureForm, p: QuadratureForm, angle: float) -> QuadratureForm:
    return x * np.cos(angle) + p * np.sin(angle)


QUADRATURES = ("X_M", "P_M", "X_L", "P_L")


@dataclass(frozen=True, eq=False)
class SystemState:
    """Live mechanical and optical quadratures plus named snapshots.

    ``snapshots["initial"]`` always holds the four quadratures at creation,
    which is what a priori (tomographic) conditioning refers to.
    """

    registry: Registry
    live: Mapping[str, QuadratureForm]
    snapshots: Mapping[str, Mapping[str, QuadratureForm]]

    def __post_init__(self):
        if set(self.live) != set(QUADRATURES):
            raise ValueError(f"live forms must be exactly {QUADRATURES}")
        object.__setattr__(self, "live", MappingProxyType(dict(self.live)))
        snaps = {k: MappingProxyType(dict(v)) for k, v in self.snapshots.items()}
        object.__setattr__(self, "snapshots", MappingProxyType(snaps))

    @classmethod
    def initial(cls, mech_cov=None, light_cov=None) -> "SystemState":
        """Fresh state: mechanics with covariance ``mech_cov`` (default ground
        state), light in vacuum unless ``light_cov`` is given."""
        mech_cov = 0.5 * np.eye(2) if mech_cov is None else np.asarray(mech_cov, dtype=float)
        light_cov = 0.5 * np.eye(2) if light_cov is None else np.asarray(light_cov, dtype=float)
        mech = NoiseMode.new(ModeKind.INITIAL_MECH, mech_cov)
        light = NoiseMode.new(ModeKind.INITIAL_LIGHT, light_cov)
        live = {
            "X_M": QuadratureForm.unit(mech, 0),
            "P_M": QuadratureForm.unit(mech, 1),
            "X_L": QuadratureForm.unit(light, 0),
            "P_L": QuadratureForm.unit(light, 1),
        }
        return cls(Registry([mech, light]), live, {"initial": dict(live)})

    @classmethod
    def thermal(cls, nbar: float) -> "SystemState":
        return cls.initial((nbar + 0.5) * np.eye(2))

    def __getitem__(self, name: str) -> QuadratureForm:
        if "." in name:
            snap, q = name.split(".", 1)
            return self.snapshots[snap][q]
        return self.live[name]

    def evolve(self, registry: Registry | None = None, **updates: QuadratureForm) -> "SystemState":
        live = dict(self.live)
        live.update(updates)
        return SystemState(self.registry if registry is None else registry, live, self.snapshots)

    def snapshot(self, name: str) -> "SystemState":
        snaps = dict(self.snapshots)
        snaps[name] = dict(self.live)
        return SystemState(self.registry, self.live, snaps)

    def variance(self, f: QuadratureForm) -> float:
        return variance(f, self.registry)

    def covariance(self, f: QuadratureForm, g: QuadratureForm) -> float:
        return covariance(f, g, self.registry)

    def conditional_variance(self, a: QuadratureForm, b: QuadratureForm) -> float:
        return conditional_variance(a, b, self.registry)

    def mech_covariance(self, snapshot: str | None = None) -> np.ndarray:
        src = self.live if snapshot is None else self.snapshots[snapshot]
        return covariance_matrix([src["X_M"], src["P_M"]], self.registry)

    def optical_quadrature(self, angle: float) -> QuadratureForm:
        """Homodyne observable ``X_L cos(angle) + P_L sin(angle)``."""
        return quadrature_at_angle(self.live["X_L"], self.live["P_L"], angle)

    def linear_map(self, names: Sequence[str] = QUADRATURES, snapshot: str = "initial") -> np.ndarray:
        """Coefficients of live ``names`` on the ``snapshot`` quadratures.

        Only meaningful when the live forms lie in the span of the snapshot
        (no added noise modes), e.g. lossless damping-free protocols.
        """
        basis = [self.snapshots[snapshot][q] for q in QUADRATURES]
        keys = []
        for f in basis:
            if len(f.coeffs) != 1:
                raise ValueError("snapshot forms must be single basis vectors")
            (k, c), = f.coeffs.items()
            keys.append((k, c))
        out = np.zeros((len(names), len(basis)))
        for r, name in enumerate(names):
            for col, (k, c) in enumerate(keys):
                out[r, col] = self.live[name].coeffs.get(k, 0.0) / c
        return out
