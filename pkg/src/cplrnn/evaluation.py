"""Free-running generation and metric evaluation of trained models."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import CPLRNNError
from .events import solve_trajectory
from .metrics import MetricConfig, d_hellinger, d_stsp, diverged, mae
from .model import ModelParams


def initial_state(params: ModelParams, x0) -> np.ndarray:
    """Latent state with read-out coordinates set to ``x0`` and hidden ones at zero."""
    z = np.zeros(params.M)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    z[:x0.size] = x0
    return z


def free_run(params: ModelParams, x0, times, max_events: int = 10_000_000, max_wall=None):
    """Unforced read-out trajectory at ``times``; returns (values, Trajectory or None)."""
    try:
        traj = solve_trajectory(params, initial_state(params, x0), times, max_events=max_events,
                                max_wall=max_wall)
    except CPLRNNError as err:
        traj = err.context.get("trajectory")
        if traj is None:
            return np.full((len(times), params.N), np.nan), None
    return traj.states[:, :params.N], traj


def mae_windows(params: ModelParams, times, values, horizon: int = 25, n_windows: int = 100,
                rng=None) -> float:
    """MAE of free predictions started from observations at random window starts."""
    rng = np.random.default_rng(0) if rng is None else rng
    values = np.asarray(values, dtype=float).reshape(len(times), -1)
    T = values.shape[0]
    h = min(horizon, T - 1)
    starts = rng.integers(0, T - h, size=n_windows)
    truth = np.empty((n_windows, h, values.shape[1]))
    gen = np.empty_like(truth)
    for w, s in enumerate(starts):
        out, _ = free_run(params, values[s], times[s:s + h + 1])
        truth[w] = values[s + 1:s + h + 1]
        gen[w] = out[1:]
    if diverged(gen):
        return float("inf")
    return mae(truth, gen, horizon=h)


@dataclass
class EvalResult:
    d_stsp: float
    d_h: float
    mae: float
    diverged: bool
    config: dict

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_model(params: ModelParams, times, values, cfg: MetricConfig | None = None,
                   n_windows: int = 100, rng=None, max_wall=None, generated=None) -> EvalResult:
    """Free-run from the first observation over ``times`` and score against ``values``."""
    cfg = cfg or MetricConfig()
    values = np.asarray(values, dtype=float).reshape(len(times), -1)
    if generated is None:
        generated, _ = free_run(params, values[0], times, max_wall=max_wall)
    div = diverged(generated)
    ds = d_stsp(values, generated, cfg.bins) if not div else float("inf")
    dh = d_hellinger(values, generated, cfg.smoothing)
    m = mae_windows(params, times, values, cfg.mae_horizon, n_windows, rng) if params is not None \
        else float("nan")
    return EvalResult(ds, dh, m, div, asdict(cfg))
