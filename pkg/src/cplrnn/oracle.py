"""Reference integrators used to cross-check the analytic solver.

Nothing here is used by the solver itself; these are brute-force routines
that make no use of the region structure.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from .model import ModelParams, RegionSolution


@njit(cache=True)
def _field(A, W, h, start, z, out):
    M = z.shape[0]
    for i in range(M):
        acc = A[i] * z[i] + h[i]
        for j in range(M):
            if j < start or z[j] > 0.0:
                acc += W[i, j] * z[j]
        out[i] = acc


@njit(cache=True)
def _rk4(A, W, h, start, z0, times, dt):
    M = z0.shape[0]
    out = np.empty((times.shape[0], M))
    z = z0.copy()
    k1 = np.empty(M)
    k2 = np.empty(M)
    k3 = np.empty(M)
    k4 = np.empty(M)
    tmp = np.empty(M)
    t = times[0]
    out[0] = z
    for n in range(1, times.shape[0]):
        target = times[n]
        while t < target:
            step = min(dt, target - t)
            _field(A, W, h, start, z, k1)
            for i in range(M):
                tmp[i] = z[i] + 0.5 * step * k1[i]
            _field(A, W, h, start, tmp, k2)
            for i in range(M):
                tmp[i] = z[i] + 0.5 * step * k2[i]
            _field(A, W, h, start, tmp, k3)
            for i in range(M):
                tmp[i] = z[i] + step * k3[i]
            _field(A, W, h, start, tmp, k4)
            for i in range(M):
                z[i] += step / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            t += step
            if target - t < 1e-12 * max(1.0, abs(target)):
                t = target
        out[n] = z
    return out


def rk4_trajectory(params: ModelParams, z0, times, dt: float = 1e-4) -> np.ndarray:
    """Fixed-step RK4 of the model vector field; first row is ``z0`` at ``times[0]``."""
    times = np.asarray(times, dtype=float)
    return _rk4(params.A, np.ascontiguousarray(params.W), params.h, params.relu_start,
                np.asarray(z0, dtype=float), times, float(dt))


@njit(cache=True)
def _dense_first_root(lam, ct, hh, t_lo, t_hi, n):
    """Earliest sign change over rows of ``ct`` by uniform sampling plus bisection."""
    R, L = ct.shape
    prev = np.empty(R)
    cur = np.empty(R)
    ex = np.empty(L, dtype=np.complex128)

    def evaluate(t, buf):
        for l in range(L):
            ex[l] = np.exp(lam[l] * t)
        for r in range(R):
            acc = 0.0
            for l in range(L):
                acc += (ct[r, l] * ex[l]).real
            buf[r] = acc + hh[r]

    evaluate(t_lo, prev)
    step = (t_hi - t_lo) / n
    for k in range(1, n + 1):
        t = t_lo + k * step
        evaluate(t, cur)
        best = np.inf
        best_r = -1
        for r in range(R):
            if (prev[r] < 0.0 and cur[r] > 0.0) or (prev[r] > 0.0 and cur[r] < 0.0):
                a = t - step
                b = t
                fa = prev[r]
                buf = np.empty(R)
                for _ in range(200):
                    m = 0.5 * (a + b)
                    if m <= a or m >= b:
                        break
                    evaluate(m, buf)
                    if buf[r] == 0.0:
                        a = m
                        b = m
                        break
                    if (buf[r] < 0.0) == (fa < 0.0):
                        a = m
                        fa = buf[r]
                    else:
                        b = m
                root = 0.5 * (a + b)
                if root < best:
                    best = root
                    best_r = r
        if best_r >= 0:
            return best, best_r
        for r in range(R):
            prev[r] = cur[r]
    return np.inf, -1


def dense_first_root(sol: RegionSolution, window, relu_start: int, n: int = 1_000_000):
    """Brute-force first root; returns ``(t, dim)`` or ``None``."""
    ct = np.ascontiguousarray(sol.c_tilde[relu_start:])
    hh = np.ascontiguousarray(sol.h_tilde[relu_start:])
    lam = np.ascontiguousarray(sol.lambdas.astype(complex))
    t, r = _dense_first_root(lam, ct.astype(complex), hh.astype(float),
                             float(window[0]), float(window[1]), int(n))
    if r < 0:
        return None
    return float(t), relu_start + int(r)
