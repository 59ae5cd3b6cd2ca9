"""Ground-truth benchmark series: Lorenz-63 and a leaky integrate-and-fire neuron."""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import EmbedRequiresRegular, MinimumRefractory


@dataclass
class Dataset:
    times: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.times.shape[0] != self.values.shape[0]:
            raise ValueError("times and values lengths differ")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("dataset contains non-finite values")

    @property
    def N(self) -> int:
        return self.values.shape[1]

    @property
    def regular(self) -> bool:
        return bool(self.meta.get("regular", True))

    def save(self, path: str, meta_path: str | None = None):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i + 1}" for i in range(self.N)])
            for t, row in zip(self.times, self.values):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
        meta_path = meta_path or _meta_path(path)
        with open(meta_path, "w") as fh:
            json.dump(self.meta, fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path: str, meta_path: str | None = None) -> "Dataset":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        meta_path = meta_path or _meta_path(path)
        meta = {}
        try:
            with open(meta_path) as fh:
                meta = json.load(fh)
        except FileNotFoundError:
            pass
        return cls(data[:, 0], data[:, 1:], meta)


def _meta_path(path: str) -> str:
    return (path[:-4] if path.endswith(".csv") else path) + ".meta.json"


@njit(cache=True)
def _lorenz_rk4(z0, sigma, rho, beta, h, n_out, every, skip):
    out = np.empty((n_out, 3))
    x, y, z = z0[0], z0[1], z0[2]
    total = skip + n_out
    for k in range(total):
        if k >= skip:
            out[k - skip, 0] = x
            out[k - skip, 1] = y
            out[k - skip, 2] = z
        for _ in range(every):
            k1x = sigma * (y - x)
            k1y = x * (rho - z) - y
            k1z = x * y - beta * z
            x2, y2, z2 = x + 0.5 * h * k1x, y + 0.5 * h * k1y, z + 0.5 * h * k1z
            k2x = sigma * (y2 - x2)
            k2y = x2 * (rho - z2) - y2
            k2z = x2 * y2 - beta * z2
            x3, y3, z3 = x + 0.5 * h * k2x, y + 0.5 * h * k2y, z + 0.5 * h * k2z
            k3x = sigma * (y3 - x3)
            k3y = x3 * (rho - z3) - y3
            k3z = x3 * y3 - beta * z3
            x4, y4, z4 = x + h * k3x, y + h * k3y, z + h * k3z
            k4x = sigma * (y4 - x4)
            k4y = x4 * (rho - z4) - y4
            k4z = x4 * y4 - beta * z4
            x += h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
            y += h / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y)
            z += h / 6.0 * (k1z + 2 * k2z + 2 * k3z + k4z)
        if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
            out[0, 0] = np.nan
            return out
    return out


def lorenz_equilibria(sigma=10.0, rho=28.0, beta=8.0 / 3.0) -> np.ndarray:
    pts = [np.zeros(3)]
    if rho > 1:
        r = math.sqrt(beta * (rho - 1))
        pts += [np.array([r, r, rho - 1]), np.array([-r, -r, rho - 1])]
    return np.array(pts)


def gen_lorenz(sigma: float = 10.0, rho: float = 28.0, beta: float = 8.0 / 3.0, dt: float = 1e-2,
               T: int = 100_000, z0=(1.0, 1.0, 1.0), time_scale: float = 100.0,
               transient: int = 1000, substeps: int = 10, seed: int | None = None) -> Dataset:
    """RK4 at ``dt / substeps``, every ``substeps``-th state kept, times scaled."""
    out = _lorenz_rk4(np.asarray(z0, dtype=float), sigma, rho, beta, dt / substeps, int(T),
                      int(substeps), int(transient))
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("Lorenz integration produced non-finite values")
    times = np.arange(T) * (dt * time_scale)
    meta = dict(generator="lorenz", sigma=sigma, rho=rho, beta=beta, dt=dt, T=int(T),
                z0=list(map(float, z0)), time_scale=time_scale, transient=transient,
                substeps=substeps, seed=seed, regular=True)
    return Dataset(times, out, meta)


def lif_isi(R=5.0, C=1e-3, V_th=1.0, V_reset=0.0, I=0.25) -> float:
    """Analytic inter-spike interval (inf when subthreshold)."""
    tau = R * C
    RI = R * I
    if RI <= V_th:
        return math.inf
    return tau * math.log((RI - V_reset) / (RI - V_th))


def gen_lif(R: float = 5.0, C: float = 1e-3, V_th: float = 1.0, V_reset: float = 0.0,
            I: float = 0.25, dt: float = 1.6e-4, T: int = 1000, time_scale: float | None = None,
            seed: int | None = None) -> Dataset:
    """Closed-form membrane potential on a regular grid, starting from ``V_reset``.

    The first grid sample at or after each threshold crossing is replaced by a
    marker at ``V_th``. Times are multiplied by ``time_scale`` (default ``1/dt``,
    i.e. unit sample spacing).
    """
    if V_reset >= V_th:
        raise MinimumRefractory("reset potential at or above threshold")
    tau = R * C
    RI = R * I
    isi = lif_isi(R, C, V_th, V_reset, I)
    if not math.isfinite(isi):
        warnings.warn("input below rheobase: no spikes are produced")
    t = np.arange(T) * dt
    if math.isfinite(isi):
        k = np.floor(t / isi)
        since = t - k * isi
        V = RI + (V_reset - RI) * np.exp(-since / tau)
        # marker on the first sample after each crossing
        spikes = np.arange(1, int(t[-1] // isi) + 1) * isi
        idx = np.searchsorted(t, spikes, side="left")
        idx = idx[idx < T]
        V[idx] = V_th
    else:
        V = RI + (V_reset - RI) * np.exp(-t / tau)
    if time_scale is None:
        time_scale = 1.0 / dt
    meta = dict(generator="lif", R=R, C=C, V_th=V_th, V_reset=V_reset, I=I, dt=dt, T=int(T),
                time_scale=time_scale, isi=isi, seed=seed, regular=True)
    return Dataset(t * time_scale, V[:, None], meta)


def subsample_irregular(ds: Dataset, fraction: float, rng: np.random.Generator) -> Dataset:
    """Random sorted subset of ``round(fraction * T)`` samples, endpoints always kept."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    T = ds.times.shape[0]
    n = max(2, int(round(fraction * T))) if T >= 2 else T
    if n >= T:
        idx = np.arange(T)
    else:
        inner = rng.choice(np.arange(1, T - 1), size=n - 2, replace=False)
        idx = np.sort(np.concatenate([[0, T - 1], inner]))
    meta = dict(ds.meta, regular=bool(n >= T), subsample_fraction=fraction)
    return Dataset(ds.times[idx], ds.values[idx], meta)


def delay_embed(times, x, d: int = 6, lag: int = 13, regular: bool = True) -> Dataset:
    """Rows ``(x_t, x_{t-lag}, ..., x_{t-(d-1)lag})`` for every ``t`` with full history."""
    times = np.asarray(times, dtype=float)
    x = np.asarray(x, dtype=float).ravel()
    if not regular or (times.size > 2 and not np.allclose(np.diff(times), times[1] - times[0],
                                                          rtol=1e-9, atol=0)):
        raise EmbedRequiresRegular("delay embedding needs a regular grid")
    span = (d - 1) * lag
    if x.size <= span:
        raise ValueError("series too short for the requested embedding")
    rows = np.stack([x[span - j * lag: x.size - j * lag] for j in range(d)], axis=1)
    return Dataset(times[span:], rows, {"generator": "delay_embed", "d": d, "lag": lag,
                                        "regular": True})
