"""Hot numeric kernels, each in a numba and a pure-numpy flavour.

The numba versions are scalar loops; the numpy versions vectorize over the
leading (path or grid) axis. Both evaluate the same arithmetic, so results
agree to rounding. Which one the public names point at is fixed at import
time by :data:`pulsedom._accel.USE_NUMBA`.

Random numbers come from a counter-based generator: a normal variate is a
pure function of ``(seed, stream, path, counter)`` built from the splitmix64
finalizer and a Box-Muller pair. Paths can therefore be simulated in any
order, or in chunks, and still reproduce bit for bit.
"""

from __future__ import annotations

import math

import numpy as np

from . import _accel
from ._accel import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_TWO_M53 = 1.0 / 9007199254740992.0
_TWO_PI = 2.0 * math.pi


# -- counter-based normals --------------------------------------------------


def _mix64_np(z):
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit
def _mix64_nb(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def path_keys(seed: int, stream: int, paths: np.ndarray) -> np.ndarray:
    """Per-path 64-bit keys for one random stream."""
    base = _mix64_np(np.array([np.uint64(seed % 2**64)], dtype=np.uint64) ^ _GOLDEN)
    with np.errstate(over="ignore"):
        base = _mix64_np(base + np.uint64(stream % 2**64) * _GOLDEN)
        return _mix64_np(base + (np.asarray(paths, dtype=np.uint64) + np.uint64(1)) * _M2)


def _uniform_pair_np(keys, pair):
    with np.errstate(over="ignore"):
        c = np.uint64(2) * np.uint64(pair)
        z1 = _mix64_np(keys + (c + np.uint64(1)) * _GOLDEN)
        z2 = _mix64_np(keys + (c + np.uint64(2)) * _GOLDEN)
    u1 = ((z1 >> _S11).astype(np.float64) + 0.5) * _TWO_M53
    u2 = ((z2 >> _S11).astype(np.float64) + 0.5) * _TWO_M53
    return u1, u2


def normals_np(keys: np.ndarray, counter: int) -> np.ndarray:
    """Standard normal number ``counter`` of each keyed stream."""
    u1, u2 = _uniform_pair_np(keys, counter // 2)
    r = np.sqrt(-2.0 * np.log(u1))
    return r * (np.cos(_TWO_PI * u2) if counter % 2 == 0 else np.sin(_TWO_PI * u2))


@njit
def _normal_pair_nb(key, pair):
    c = np.uint64(2) * np.uint64(pair)
    z1 = _mix64_nb(key + (c + np.uint64(1)) * np.uint64(0x9E3779B97F4A7C15))
    z2 = _mix64_nb(key + (c + np.uint64(2)) * np.uint64(0x9E3779B97F4A7C15))
    u1 = (np.float64(z1 >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)
    u2 = (np.float64(z2 >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)
    r = math.sqrt(-2.0 * math.log(u1))
    a = 2.0 * math.pi * u2
    return r * math.cos(a), r * math.sin(a)


@njit
def _normals_nb(keys, counter, out):
    pair = counter // 2
    for i in range(keys.shape[0]):
        n0, n1 = _normal_pair_nb(keys[i], pair)
        out[i] = n0 if counter % 2 == 0 else n1
    return out


def normals(keys: np.ndarray, counter: int) -> np.ndarray:
    if _accel.USE_NUMBA:
        return _normals_nb(keys, counter, np.empty(keys.shape[0]))
    return normals_np(keys, counter)


# -- Langevin integration ---------------------------------------------------


def langevin_np(x, p, keys, counter0, nsteps, dt, omega, gamma, noise_amp, heun=True):
    """Integrate ``dX = w P dt``, ``dP = (-w X - g P) dt + noise_amp dW`` in place.

    Step ``s`` uses normal number ``counter0 + s`` of each path's stream.
    """
    sq = math.sqrt(dt) * noise_amp
    for s in range(nsteps):
        dw = sq * normals_np(keys, counter0 + s)
        fx = omega * p
        fp = -omega * x - gamma * p
        if heun:
            xt = x + fx * dt
            pt = p + fp * dt + dw
            x_new = x + 0.5 * (fx + omega * pt) * dt
            p_new = p + 0.5 * (fp - omega * xt - gamma * pt) * dt + dw
        else:
            x_new = x + fx * dt
            p_new = p + fp * dt + dw
        x[:] = x_new
        p[:] = p_new
    return x, p


@njit
def _langevin_nb(x, p, keys, counter0, nsteps, dt, omega, gamma, noise_amp, heun):
    sq = math.sqrt(dt) * noise_amp
    for i in range(x.shape[0]):
        xi = x[i]
        pi = p[i]
        key = keys[i]
        spare = 0.0
        for s in range(nsteps):
            j = counter0 + s
            if s == 0 or j % 2 == 0:
                n0, n1 = _normal_pair_nb(key, j // 2)
                z = n0 if j % 2 == 0 else n1
                spare = n1
            else:
                z = spare
            dw = sq * z
            fx = omega * pi
            fp = -omega * xi - gamma * pi
            if heun:
                xt = xi + fx * dt
                pt = pi + fp * dt + dw
                xn = xi + 0.5 * (fx + omega * pt) * dt
                pn = pi + 0.5 * (fp - omega * xt - gamma * pt) * dt + dw
            else:
                xn = xi + fx * dt
                pn = pi + fp * dt + dw
            xi = xn
            pi = pn
        x[i] = xi
        p[i] = pi
    return x, p


def langevin(x, p, keys, counter0, nsteps, dt, omega, gamma, noise_amp, heun=True):
    if _accel.USE_NUMBA:
        return _langevin_nb(x, p, keys, counter0, nsteps, dt, omega, gamma, noise_amp, heun)
    return langevin_np(x, p, keys, counter0, nsteps, dt, omega, gamma, noise_amp, heun)


# -- two-pulse conditional variance over a parameter batch ------------------
#
# Noise basis (10 variables): X0 P0 | XL0 PL0 | xiX xiP | dX1 dP1 | dX2 dP2
# Protocol: Pulse(l1) Loss(eta1) Free(M, N) Pulse(l2) Loss(eta2).
# The returned value is min over homodyne angles of V(target | quadrature),
# which for a scalar target equals V(t) - c^T S^-1 c with S the optical
# covariance and c the target-optics cross covariance. That difference
# cancels badly when the initial variance is large, so it is evaluated as
# the squared distance of the whitened target from the whitened optical
# plane (Gram-Schmidt with one reorthogonalization pass).


def two_pulse_condvar_np(l1, l2, eta1, eta2, mmap, nmat, init, tvec, posterior):
    l1 = np.asarray(l1, dtype=float)
    l2 = np.asarray(l2, dtype=float)
    n = l1.shape[0]
    mmap = np.broadcast_to(mmap, (n, 2, 2))
    nmat = np.broadcast_to(nmat, (n, 2, 2))
    xm = np.zeros((n, 10)); xm[:, 0] = 1.0
    pm = np.zeros((n, 10)); pm[:, 1] = 1.0
    xl = np.zeros((n, 10)); xl[:, 2] = 1.0
    pl = np.zeros((n, 10)); pl[:, 3] = 1.0
    pl = pl - l1[:, None] * xm
    pm = pm - l1[:, None] * xl
    t1, r1 = math.sqrt(eta1), math.sqrt(1.0 - eta1)
    xl = t1 * xl; xl[:, 6] += r1
    pl = t1 * pl; pl[:, 7] += r1
    xm2 = mmap[:, 0, 0, None] * xm + mmap[:, 0, 1, None] * pm
    pm2 = mmap[:, 1, 0, None] * xm + mmap[:, 1, 1, None] * pm
    xm2[:, 4] += 1.0
    pm2[:, 5] += 1.0
    pl = pl - l2[:, None] * xm2
    pm2 = pm2 - l2[:, None] * xl
    t2, r2 = math.sqrt(eta2), math.sqrt(1.0 - eta2)
    xl = t2 * xl; xl[:, 8] += r2
    pl = t2 * pl; pl[:, 9] += r2
    if posterior:
        tg = tvec[0] * xm2 + tvec[1] * pm2
    else:
        tg = np.zeros((n, 10)); tg[:, 0] = tvec[0]; tg[:, 1] = tvec[1]

    root_init = _sqrt_psd2_np(np.asarray(init, dtype=float)[None])[0]
    root_noise = _sqrt_psd2_np(nmat)
    h = math.sqrt(0.5)

    def whiten(u):
        w = np.empty_like(u)
        w[:, 0:2] = u[:, 0:2] @ root_init
        w[:, 2:4] = h * u[:, 2:4]
        w[:, 4:6] = np.einsum("ij,ijk->ik", u[:, 4:6], root_noise)
        w[:, 6:10] = h * u[:, 6:10]
        return w

    # squared distance of the target from the span of the two optical quadratures
    e1 = whiten(xl)
    e1 /= np.linalg.norm(e1, axis=1)[:, None]
    e2 = whiten(pl)
    for _ in range(2):
        e2 -= np.einsum("ij,ij->i", e2, e1)[:, None] * e1
    e2 /= np.linalg.norm(e2, axis=1)[:, None]
    r = whiten(tg)
    for _ in range(2):
        r -= np.einsum("ij,ij->i", r, e1)[:, None] * e1
        r -= np.einsum("ij,ij->i", r, e2)[:, None] * e2
    return np.einsum("ij,ij->i", r, r)


def _sqrt_psd2_np(m):
    """Symmetric square roots of a stack of 2x2 PSD matrices."""
    det = np.maximum(m[:, 0, 0] * m[:, 1, 1] - m[:, 0, 1] * m[:, 1, 0], 0.0)
    s = np.sqrt(det)
    k = np.sqrt(np.maximum(m[:, 0, 0] + m[:, 1, 1] + 2 * s, 0.0))
    out = (m + s[:, None, None] * np.eye(2)) / np.where(k > 0, k, 1.0)[:, None, None]
    return np.where((k > 0)[:, None, None], out, 0.0)


@njit
def _sqrt_psd2_nb(m, out):
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    s = math.sqrt(det) if det > 0.0 else 0.0
    tr = m[0, 0] + m[1, 1] + 2.0 * s
    k = math.sqrt(tr) if tr > 0.0 else 0.0
    if k == 0.0:
        out[0, 0] = 0.0; out[0, 1] = 0.0; out[1, 0] = 0.0; out[1, 1] = 0.0
        return
    out[0, 0] = (m[0, 0] + s) / k
    out[0, 1] = m[0, 1] / k
    out[1, 0] = m[1, 0] / k
    out[1, 1] = (m[1, 1] + s) / k


@njit
def _whiten_nb(u, w, ri, rn, h):
    w[0] = u[0] * ri[0, 0] + u[1] * ri[1, 0]
    w[1] = u[0] * ri[0, 1] + u[1] * ri[1, 1]
    w[2] = h * u[2]
    w[3] = h * u[3]
    w[4] = u[4] * rn[0, 0] + u[5] * rn[1, 0]
    w[5] = u[4] * rn[0, 1] + u[5] * rn[1, 1]
    for k in range(6, 10):
        w[k] = h * u[k]


@njit
def _dot10(a, b):
    acc = 0.0
    for k in range(10):
        acc += a[k] * b[k]
    return acc


@njit
def _remove(r, e):
    d = _dot10(r, e)
    for k in range(10):
        r[k] -= d * e[k]


@njit
def _normalize(e):
    nrm = math.sqrt(_dot10(e, e))
    for k in range(10):
        e[k] /= nrm


@njit
def _two_pulse_condvar_nb(l1, l2, eta1, eta2, mmap, nmat, init, tvec, posterior):
    n = l1.shape[0]
    out = np.empty(n)
    xm = np.empty(10); pm = np.empty(10); xl = np.empty(10); pl = np.empty(10)
    xm2 = np.empty(10); pm2 = np.empty(10); tg = np.empty(10)
    e1 = np.empty(10); e2 = np.empty(10); r = np.empty(10)
    ri = np.empty((2, 2)); rn = np.empty((2, 2))
    _sqrt_psd2_nb(init, ri)
    h = math.sqrt(0.5)
    t1 = math.sqrt(eta1); r1 = math.sqrt(1.0 - eta1)
    t2 = math.sqrt(eta2); r2 = math.sqrt(1.0 - eta2)
    for i in range(n):
        m = mmap[i]
        _sqrt_psd2_nb(nmat[i], rn)
        for k in range(10):
            xm[k] = 0.0; pm[k] = 0.0; xl[k] = 0.0; pl[k] = 0.0
        xm[0] = 1.0; pm[1] = 1.0; xl[2] = 1.0; pl[3] = 1.0
        for k in range(10):
            pl[k] -= l1[i] * xm[k]
            pm[k] -= l1[i] * xl[k]
        for k in range(10):
            xl[k] *= t1
            pl[k] *= t1
        xl[6] += r1
        pl[7] += r1
        for k in range(10):
            xm2[k] = m[0, 0] * xm[k] + m[0, 1] * pm[k]
            pm2[k] = m[1, 0] * xm[k] + m[1, 1] * pm[k]
        xm2[4] += 1.0
        pm2[5] += 1.0
        for k in range(10):
            pl[k] -= l2[i] * xm2[k]
            pm2[k] -= l2[i] * xl[k]
        for k in range(10):
            xl[k] *= t2
            pl[k] *= t2
        xl[8] += r2
        pl[9] += r2
        for k in range(10):
            if posterior:
                tg[k] = tvec[0] * xm2[k] + tvec[1] * pm2[k]
            else:
                tg[k] = 0.0
        if not posterior:
            tg[0] = tvec[0]
            tg[1] = tvec[1]
        _whiten_nb(xl, e1, ri, rn, h)
        _normalize(e1)
        _whiten_nb(pl, e2, ri, rn, h)
        _remove(e2, e1)
        _remove(e2, e1)
        _normalize(e2)
        _whiten_nb(tg, r, ri, rn, h)
        for _ in range(2):
            _remove(r, e1)
            _remove(r, e2)
        out[i] = _dot10(r, r)
    return out


def two_pulse_condvar(l1, l2, eta1, eta2, mmap, nmat, init, tvec, posterior):
    """Optimal-homodyne conditional variance for a batch of two-pulse protocols.

    ``mmap`` and ``nmat`` are the free-evolution mean map and added noise,
    either a single 2x2 or one per batch entry. ``tvec = (cos psi, sin psi)``
    picks the mechanical quadrature: of the initial state when
    ``posterior`` is false, of the final state otherwise.
    """
    l1 = np.ascontiguousarray(l1, dtype=np.float64)
    l2 = np.ascontiguousarray(l2, dtype=np.float64)
    n = l1.shape[0]
    mmap = np.ascontiguousarray(np.broadcast_to(mmap, (n, 2, 2)), dtype=np.float64)
    nmat = np.ascontiguousarray(np.broadcast_to(nmat, (n, 2, 2)), dtype=np.float64)
    init = np.ascontiguousarray(init, dtype=np.float64)
    tvec = np.ascontiguousarray(tvec, dtype=np.float64)
    if _accel.USE_NUMBA:
        return _two_pulse_condvar_nb(l1, l2, float(eta1), float(eta2), mmap, nmat, init, tvec, bool(posterior))
    return two_pulse_condvar_np(l1, l2, float(eta1), float(eta2), mmap, nmat, init, tvec, bool(posterior))


def backend() -> str:
    return "numba" if _accel.USE_NUMBA else "numpy"
