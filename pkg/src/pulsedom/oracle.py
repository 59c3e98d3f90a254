"""Stochastic-trajectory cross-check of the covariance engine.

Every quadrature is sampled as a classical Gaussian random variable: the
initial state from its covariance, each pulse as an instantaneous linear
kick, each loss as mixing with fresh variance-1/2 variates, and the free
evolution by integrating the Langevin equation path by path. For a linear
model with Gaussian inputs this classical unraveling reproduces every
symmetrized second moment exactly, so ensemble statistics converge to the
covariance engine's predictions at the ``1/sqrt(n_paths)`` rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .dynamics import OscillatorParams
from .gaussian import QUADRATURES
from .protocol import Displace, FreeEvolution, Loss, ProtocolStep, Pulse, Snapshot

STREAM_INIT_MECH = 0
STREAM_INIT_LIGHT = 1
STREAM_STEP0 = 2


class StepSizeError(RuntimeError):
    """Integration blew up; the time step is too large."""


@dataclass(frozen=True)
class TrajectoryConfig:
    n_paths: int = 100_000
    dt: float | None = None
    seed: int = 0
    scheme: str = "heun"
    steps_per_radian: int = 200
    min_steps: int = 64
    chunk: int = 1 << 16

    def __post_init__(self):
        if self.n_paths < 2:
            raise ValueError("need at least two paths")
        if self.scheme not in ("heun", "euler"):
            raise ValueError("scheme must be 'heun' or 'euler'")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def n_steps(self, osc: OscillatorParams, theta: float) -> tuple[int, float]:
        """Step count and step size for a segment of rotation ``theta``."""
        t = theta / osc.omega_m
        if self.dt is not None:
            if self.dt > 0.01 / osc.omega_m * (1 + 1e-12):
                raise ValueError("dt must not exceed 1/(100 omega_m)")
            n = max(1, int(math.ceil(t / self.dt * (1 - 1e-12))))
        else:
            n = max(self.min_steps, int(math.ceil(theta * self.steps_per_radian)))
        return n, t / n


def _sqrt_psd(cov: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (cov + cov.T))
    return v * np.sqrt(np.clip(w, 0.0, None))


def _simulate_chunk(steps, osc, cfg, paths, init_root, light_root):
    z = [kernels.normals(kernels.path_keys(cfg.seed, STREAM_INIT_MECH, paths), i) for i in (0, 1)]
    xm = init_root[0, 0] * z[0] + init_root[0, 1] * z[1]
    pm = init_root[1, 0] * z[0] + init_root[1, 1] * z[1]
    z = [kernels.normals(kernels.path_keys(cfg.seed, STREAM_INIT_LIGHT, paths), i) for i in (0, 1)]
    xl = light_root[0, 0] * z[0] + light_root[0, 1] * z[1]
    pl = light_root[1, 0] * z[0] + light_root[1, 1] * z[1]
    snaps = {"initial": (xm.copy(), pm.copy(), xl.copy(), pl.copy())}
    scale = 2.0 * max(osc.bath_variance if osc else 0.5, 0.5, float(np.mean(xm * xm + pm * pm)))

    for k, step in enumerate(steps):
        stream = STREAM_STEP0 + k
        if isinstance(step, Pulse):
            pl = pl - step.lam * xm
            pm = pm - step.lam * xl
        elif isinstance(step, Loss):
            keys = kernels.path_keys(cfg.seed, stream, paths)
            t, r = math.sqrt(step.eta), math.sqrt(1.0 - step.eta)
            xl = t * xl + r * math.sqrt(0.5) * kernels.normals(keys, 0)
            pl = t * pl + r * math.sqrt(0.5) * kernels.normals(keys, 1)
        elif isinstance(step, FreeEvolution):
            if step.theta == 0:
                continue
            n, dt = cfg.n_steps(osc, step.theta)
            keys = kernels.path_keys(cfg.seed, stream, paths)
            amp = math.sqrt(2.0 * osc.gamma * osc.bath_variance)
            xm, pm = np.ascontiguousarray(xm), np.ascontiguousarray(pm)
            kernels.langevin(xm, pm, keys, 0, n, dt, osc.omega_m, osc.gamma, amp, cfg.scheme == "heun")
            energy = float(np.mean(xm * xm + pm * pm))
            if not np.isfinite(energy) or energy > 1e6 * scale:
                raise StepSizeError(f"mean energy {energy:.3g} exceeded 1e6 x equilibrium; reduce dt")
        elif isinstance(step, Displace):
            xm = xm + step.dx
            pm = pm + step.dp
        elif isinstance(step, Snapshot):
            snaps[step.name] = (xm.copy(), pm.copy(), xl.copy(), pl.copy())
        else:
            raise TypeError(f"unknown protocol step {step!r}")

    cols = [xm, pm, xl, pl]
    for name in snaps:
        cols.extend(snaps[name])
    return np.column_stack(cols), list(snaps)


@dataclass
class EnsembleResult:
    names: list[str]
    samples: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.samples.shape[0]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def column(self, name: str) -> np.ndarray:
        return self.samples[:, self.index(name)]

    def combination(self, coefs: Mapping[str, float]) -> np.ndarray:
        out = np.zeros(self.n_paths)
        for name, c in coefs.items():
            out += c * self.column(name)
        return out

    @property
    def means(self) -> np.ndarray:
        return self.samples.mean(axis=0)

    @property
    def covariance(self) -> np.ndarray:
        return np.cov(self.samples, rowvar=False)

    @property
    def covariance_se(self) -> np.ndarray:
        """Large-sample standard error of each covariance entry (Gaussian data)."""
        c = self.covariance
        d = np.diag(c)
        return np.sqrt((np.outer(d, d) + c * c) / (self.n_paths - 1))

    def variance(self, coefs: Mapping[str, float] | str):
        """Sample variance of a linear combination and its standard error."""
        v = self.column(coefs) if isinstance(coefs, str) else self.combination(coefs)
        var = float(np.var(v, ddof=1))
        return var, var * math.sqrt(2.0 / (self.n_paths - 1))

    def conditional_variance(self, target: Mapping[str, float] | str, meter: Mapping[str, float] | str):
        """Residual variance of ``target`` after linear regression on ``meter``.

        Returns ``(value, standard error)``.
        """
        t = self.column(target) if isinstance(target, str) else self.combination(target)
        m = self.column(meter) if isinstance(meter, str) else self.combination(meter)
        t = t - t.mean()
        m = m - m.mean()
        beta = float(np.dot(t, m) / np.dot(m, m))
        r = t - beta * m
        dof = self.n_paths - 2
        s2 = float(np.dot(r, r)) / dof
        return s2, s2 * math.sqrt(2.0 / dof)

    def moments_table(self) -> list[tuple[str, float, float, float]]:
        """Rows of ``(name, mean, variance, standard error of variance)``."""
        rows = []
        for i, name in enumerate(self.names):
            col = self.samples[:, i]
            var = float(np.var(col, ddof=1))
            rows.append((name, float(col.mean()), var, var * math.sqrt(2.0 / (self.n_paths - 1))))
        return rows

    def dump_moments(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("name\tmean\tvariance\tstd_error\n")
            for name, mu, var, se in self.moments_table():
                fh.write(f"{name}\t{mu:.17g}\t{var:.17g}\t{se:.17g}\n")


def simulate_ensemble(steps: Sequence[ProtocolStep], osc: OscillatorParams | None, cfg: TrajectoryConfig,
                      init_cov=None, light_cov=None) -> EnsembleResult:
    """Sample ``cfg.n_paths`` trajectories of the protocol.

    Columns are the live quadratures followed by every snapshot
    (``"initial.X_M"`` and so on). Paths are processed in fixed-size chunks;
    every random number is keyed by its absolute path index, so the output
    does not depend on the chunk size.
    """
    steps = list(steps)
    if any(isinstance(s, FreeEvolution) and s.theta > 0 for s in steps) and osc is None:
        raise ValueError("free evolution needs oscillator parameters")
    if init_cov is None:
        init_cov = (osc.bath_variance if osc is not None else 0.5) * np.eye(2)
    light_cov = 0.5 * np.eye(2) if light_cov is None else np.asarray(light_cov, dtype=float)
    init_root = _sqrt_psd(np.asarray(init_cov, dtype=float))
    light_root = _sqrt_psd(light_cov)

    blocks, snap_names = [], None
    for start in range(0, cfg.n_paths, cfg.chunk):
        paths = np.arange(start, min(start + cfg.chunk, cfg.n_paths), dtype=np.uint64)
        block, snap_names = _simulate_chunk(steps, osc, cfg, paths, init_root, light_root)
        blocks.append(block)
    names = list(QUADRATURES) + [f"{s}.{q}" for s in snap_names for q in QUADRATURES]
    return EnsembleResult(names, np.vstack(blocks))
