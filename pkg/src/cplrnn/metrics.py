"""Reconstruction metrics: state-space divergence, spectral Hellinger distance, MAE."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter1d

DIVERGENCE_LIMIT = 1e10
MAX_BINS = 10 ** 8


@dataclass
class MetricConfig:
    bins: int = 30
    smoothing: float = 20.0
    mae_horizon: int = 25

    def __post_init__(self):
        if self.bins < 2:
            raise ValueError("need at least two bins per dimension")
        if self.smoothing < 0:
            raise ValueError("smoothing must be non-negative")
        if self.mae_horizon < 1:
            raise ValueError("mae_horizon must be positive")


def _as_2d(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def diverged(x) -> bool:
    x = np.asarray(x, dtype=float)
    return bool(not np.all(np.isfinite(x)) or np.any(np.abs(x) > DIVERGENCE_LIMIT))


def d_stsp(truth, generated, bins: int = 30) -> float:
    """KL divergence of binned state-space occupations (truth || generated).

    Both histograms get one pseudo-count per bin before normalization, so the
    value is finite for disjoint supports and zero for identical samples.
    """
    x = _as_2d(truth)
    y = _as_2d(generated)
    if not np.all(np.isfinite(x)):
        raise ValueError("truth contains non-finite samples")
    if x.shape[1] != y.shape[1]:
        raise ValueError("dimension mismatch")
    if diverged(y):
        return float("inf")
    N = x.shape[1]
    if bins ** N > MAX_BINS:
        raise ValueError(f"{bins}^{N} bins exceed the histogram limit")
    both = np.concatenate([x, y])
    lo = both.min(axis=0)
    hi = both.max(axis=0)
    pad = 0.01 * (hi - lo)
    pad[pad == 0] = 0.5
    edges = [np.linspace(lo[i] - pad[i], hi[i] + pad[i], bins + 1) for i in range(N)]
    cx, _ = np.histogramdd(x, bins=edges)
    cy, _ = np.histogramdd(y, bins=edges)
    K = cx.size
    p = (cx.ravel() + 1.0) / (x.shape[0] + K)
    q = (cy.ravel() + 1.0) / (y.shape[0] + K)
    return float(max(np.sum(p * np.log(p / q)), 0.0))


def power_spectrum(x, smoothing: float = 0.0) -> np.ndarray | None:
    """Normalized, optionally Gaussian-smoothed power spectrum of a mean-removed series.

    Returns ``None`` for a constant series.
    """
    x = np.asarray(x, dtype=float)
    x = x - x.mean()
    f = np.abs(np.fft.rfft(x)) ** 2
    # Below 1e-3 the kernel is a unit impulse; tiny widths would underflow sigma**2 in scipy.
    if smoothing > 1e-3:
        f = gaussian_filter1d(f, smoothing)
    s = f.sum()
    if not s > 1e-300 * f.size or np.ptp(x) == 0.0:
        return None
    return f / s


def hellinger(f: np.ndarray, g: np.ndarray) -> float:
    return float(np.sqrt(np.sum((np.sqrt(f) - np.sqrt(g)) ** 2)) / np.sqrt(2.0))


def d_hellinger(truth, generated, smoothing: float = 20.0) -> float:
    """Mean over dimensions of the Hellinger distance between power spectra.

    A constant generated dimension scores 1 against an oscillating truth.
    """
    x = _as_2d(truth)
    y = _as_2d(generated)
    if x.shape[1] != y.shape[1]:
        raise ValueError("dimension mismatch")
    if diverged(y):
        return 1.0
    T = min(x.shape[0], y.shape[0])
    out = []
    for i in range(x.shape[1]):
        f = power_spectrum(x[:T, i], smoothing)
        g = power_spectrum(y[:T, i], smoothing)
        if f is None and g is None:
            out.append(0.0)
        elif f is None or g is None:
            out.append(1.0)
        else:
            out.append(min(hellinger(f, g), 1.0))
    return float(np.mean(out))


def mae(truth, generated, horizon: int = 25, return_flag: bool = False):
    """Mean absolute error over the first ``horizon`` steps.

    Inputs are ``(T, N)`` for one window or ``(windows, T, N)``. If ``horizon``
    exceeds the available steps it is truncated and a warning is issued.
    """
    x = np.asarray(truth, dtype=float)
    y = np.asarray(generated, dtype=float)
    if x.shape != y.shape:
        raise ValueError("shape mismatch")
    if x.ndim == 1:
        x = x[:, None]
        y = y[:, None]
    if x.ndim == 2:
        x = x[None]
        y = y[None]
    truncated = horizon > x.shape[1]
    if truncated:
        warnings.warn(f"horizon {horizon} exceeds {x.shape[1]} available steps; truncated")
    h = min(horizon, x.shape[1])
    val = float(np.mean(np.abs(x[:, :h] - y[:, :h])))
    return (val, truncated) if return_flag else val
