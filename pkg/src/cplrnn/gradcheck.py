"""Finite-difference verification of the training gradient."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CPLRNNError
from .gradients import GradAccumulator, _switch_factor
from .model import ModelParams, max_abscissa
from .training import loss_and_grad, stf_forward, mse_loss

REL_TOL = 1e-4
ABS_TOL = 1e-7
FD_STEP = 1e-5
NEAR_TANGENT = 1e-3


@dataclass
class GradcheckReport:
    n_models: int = 0
    n_excluded: int = 0
    n_without_events: int = 0
    max_rel: dict = field(default_factory=lambda: {"A": 0.0, "W": 0.0, "h": 0.0})
    failures: list = field(default_factory=list)
    discarded_segments: int = 0

    @property
    def passed(self) -> bool:
        return not self.failures and self.n_models > 0

    def to_dict(self) -> dict:
        return {"n_models": self.n_models, "n_excluded": self.n_excluded,
                "n_without_events": self.n_without_events,
                "max_rel_error": self.max_rel, "failures": self.failures[:20],
                "n_failures": len(self.failures), "discarded_segments": self.discarded_segments,
                "passed": self.passed}


def random_model(rng, M_max: int = 5, P_max: int = 2, abscissa_max: float = 0.5) -> ModelParams:
    while True:
        M = int(rng.integers(1, M_max + 1))
        P = int(rng.integers(1, min(P_max, M) + 1))
        p = ModelParams(A=-rng.uniform(0.1, 1.0, M), W=rng.normal(0, 1.5 / np.sqrt(M), (M, M)),
                        h=rng.normal(0, 1, M), P=P, N=max(1, M // 2))
        if max_abscissa(p) < abscissa_max:
            return p


def _tangency(params, rec) -> tuple[int, float]:
    """Number of switch events and the smallest normalized crossing speed."""
    n, worst = 0, np.inf

    def speed(sol, t, d):
        v = np.exp(sol.lambdas * t) * sol.lambdas @ sol.c_tilde[d]
        scale = 1.0 + float(np.sum(np.abs(sol.c_tilde[d] * sol.lambdas)))
        return abs(float(np.real(v))) / scale

    for _, traj in rec.chunks:
        for k, seg in enumerate(traj.segments):
            if k == 0:
                # forced starts may sit exactly on a boundary
                for d in range(params.relu_start, params.M):
                    if seg.sol.z0[d] == 0.0:
                        worst = min(worst, speed(seg.sol, 0.0, d))
            if seg.t_switch is None:
                continue
            n += 1
            worst = min(worst, speed(seg.sol, seg.t_switch, seg.dim))
    return n, worst


def _loss(params, times, values, tau):
    rec = stf_forward(params, times, values, tau)
    return mse_loss(rec.predictions, values[1:]), rec


def check_model(params: ModelParams, times, values, tau: int, step: float = FD_STEP):
    """Returns (analytic ParamGrad, fd dict, status).

    status is "ok", "no_events" (nothing switches, so the case does not test switch-time
    terms) or "tangent" (a crossing is too slow for a reliable finite difference, or the
    perturbation changes the event count).
    """
    base, rec = _loss(params, times, values, tau)
    n_ev, tang = _tangency(params, rec)
    if n_ev == 0:
        return None, None, "no_events"
    if tang < NEAR_TANGENT:
        return None, None, "tangent"
    acc = GradAccumulator(params)
    loss, _ = loss_and_grad(params, times, values, tau, acc=acc)
    grad = acc.finalize(check_degenerate=False)
    fd = {}
    for name in ("A", "W", "h"):
        arr = getattr(params, name)
        out = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            vals = []
            for sgn in (1.0, -1.0):
                a = arr.copy()
                a[idx] += sgn * step
                Lx, r = _loss(params.replace(**{name: a}), times, values, tau)
                n2, t2 = _tangency(params, r)
                if n2 != n_ev or t2 < NEAR_TANGENT:
                    return None, None, "tangent"
                vals.append(Lx)
            out[idx] = (vals[0] - vals[1]) / (2 * step)
        fd[name] = out
    return grad, fd, "ok"


def run_gradcheck(n_models: int = 200, rng: np.random.Generator | None = None,
                  model: ModelParams | None = None, seq_len: int = 12, tau: int = 4,
                  max_attempts: int | None = None) -> GradcheckReport:
    """Compare analytic and central-difference gradients on ``n_models`` usable cases."""
    rng = np.random.default_rng(0) if rng is None else rng
    rep = GradcheckReport()
    max_attempts = max_attempts or 20 * n_models
    attempts = 0
    while rep.n_models < n_models and attempts < max_attempts:
        attempts += 1
        params = model if model is not None else random_model(rng)
        times = np.cumsum(rng.uniform(0.3, 1.0, seq_len))
        values = rng.normal(0, 1, (seq_len, params.N))
        if model is not None:
            values = values * 2.0
        try:
            grad, fd, status = check_model(params, times, values, tau)
        except CPLRNNError:
            status = "error"
        if status == "no_events":
            rep.n_without_events += 1
            continue
        if status != "ok":
            rep.n_excluded += 1
            continue
        rep.n_models += 1
        rep.discarded_segments += grad.discarded_segments
        for name, an in (("A", grad.dA), ("W", grad.dW), ("h", grad.dh)):
            err = np.abs(an - fd[name])
            rel = err / np.maximum(np.abs(fd[name]), 1e-300)
            rep.max_rel[name] = max(rep.max_rel[name], float(np.max(np.where(err > ABS_TOL, rel, 0.0))))
            bad = err > np.maximum(REL_TOL * np.abs(fd[name]), ABS_TOL)
            for idx in zip(*np.nonzero(bad)):
                rep.failures.append({"model": rep.n_models - 1, "param": name,
                                     "index": [int(i) for i in idx],
                                     "analytic": float(an[idx]), "fd": float(fd[name][idx])})
    return rep


def tangential_example():
    """A model and start state whose last coordinate crosses zero with zero speed.

    The crossing is an inflection (triple root) at t = 1, so the switch time
    has no finite sensitivity and its gradient must be discarded.
    """
    A = np.array([-1.0, -2.0, -3.0])
    W = np.array([[0.0, 0.0, 0.5], [1.0, 0.0, 0.3], [0.5, 1.0, 0.2]])
    h = np.array([1.0, 1.0, 1.0])
    params = ModelParams(A=A, W=W, h=h, P=1, N=2)
    from .model import decomposition
    dec = decomposition(params, 0)
    lam = dec.lam.real
    t_star = 1.0
    E = np.exp(lam * t_star)
    Mx = np.vstack([E, lam * E, lam ** 2 * E])
    a = np.linalg.solve(Mx, np.array([dec.p[2], 0.0, 0.0]))    # htilde = -p
    c = a / dec.U[2].real
    z0 = (dec.U.real @ c) - dec.p
    if z0[2] > 0:
        params = params.replace(h=-h)
        return tangential_example_flip(params, t_star)
    return params, z0, t_star


def tangential_example_flip(params, t_star):
    from .model import decomposition
    dec = decomposition(params, 0)
    lam = dec.lam.real
    E = np.exp(lam * t_star)
    Mx = np.vstack([E, lam * E, lam ** 2 * E])
    a = np.linalg.solve(Mx, np.array([dec.p[2], 0.0, 0.0]))
    c = a / dec.U[2].real
    return params, (dec.U.real @ c) - dec.p, t_star


def run_tangential_injection() -> int:
    """Discard count for a loss that passes through the tangential example."""
    from .events import solve_trajectory
    from .gradients import trajectory_vjp
    params, z0, _ = tangential_example()
    traj = solve_trajectory(params, z0, np.linspace(0.0, 3.0, 7))
    acc = GradAccumulator(params)
    trajectory_vjp(params, traj, np.ones_like(traj.states), acc)
    return acc.discarded
