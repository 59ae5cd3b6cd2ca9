"""Reverse-mode gradients of losses on piecewise-analytic trajectories.

Within a region the state is ``z(s) = sum_l ctilde[:, l] exp(lam_l s) + htilde``
with ``ctilde = U diag(c)``, ``U c = z0 + p`` and ``p = W_region^{-1} h``.
Gradients flow back through the point evaluations, through the switch times
(implicit differentiation of ``f_d(s*) = 0``) and finally through the
eigendecomposition and the linear solves of each visited region.

Adjoints of everything that depends only on the region (``lam``, ``U``, ``p``)
are accumulated per region and pushed through the eigendecomposition once.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import DegenerateGradient
from .events import DELTA_T, Trajectory
from .model import ModelParams, RegionDecomposition, RegionSolution

TANGENT_RTOL = 1e-8


@dataclass
class ParamGrad:
    dA: np.ndarray
    dW: np.ndarray
    dh: np.ndarray
    discarded_segments: int = 0

    @classmethod
    def zeros(cls, M: int) -> "ParamGrad":
        return cls(np.zeros(M), np.zeros((M, M)), np.zeros(M), 0)

    def __add__(self, other: "ParamGrad") -> "ParamGrad":
        return ParamGrad(self.dA + other.dA, self.dW + other.dW, self.dh + other.dh,
                         self.discarded_segments + other.discarded_segments)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.dA, self.dW.ravel(), self.dh])

    def scaled(self, k: float) -> "ParamGrad":
        return ParamGrad(self.dA * k, self.dW * k, self.dh * k, self.discarded_segments)

    def norm(self) -> float:
        return float(np.linalg.norm(self.flat()))


class _RegionAdjoint:
    __slots__ = ("dec", "U_bar", "lam_bar", "p_bar")

    def __init__(self, dec: RegionDecomposition):
        L = dec.lam.shape[0]
        self.dec = dec
        self.U_bar = np.zeros((L, L), dtype=complex)
        self.lam_bar = np.zeros(L, dtype=complex)
        self.p_bar = np.zeros(L)


class GradAccumulator:
    """Collects per-region adjoints over any number of segments."""

    def __init__(self, params: ModelParams):
        self.params = params
        self.regions: dict[int, _RegionAdjoint] = {}
        self.discarded = 0
        self.switches = 0

    def _slot(self, dec: RegionDecomposition) -> _RegionAdjoint:
        slot = self.regions.get(dec.region)
        if slot is None or slot.dec is not dec:
            slot = _RegionAdjoint(dec)
            self.regions[dec.region] = slot
        return slot

    def add_solution_adjoint(self, sol: RegionSolution, ct_bar, lam_bar, ht_bar) -> np.ndarray:
        """Push adjoints of (ctilde, lam, htilde) of one segment; returns d z0."""
        dec = sol.dec
        U, c = sol.U, sol.c
        c_bar = np.einsum("il,il->l", np.conj(U), ct_bar)
        w = sla.lu_solve(dec.U_lu, c_bar, trans=2, check_finite=False)
        z0_bar = w.real.copy()
        if dec.perturbed:
            # eigenvector sensitivities of a nudged matrix are not trusted
            self.discarded += 1
            return z0_bar
        slot = self._slot(dec)
        slot.U_bar += (ct_bar - w[:, None]) * np.conj(c)[None, :]
        slot.lam_bar += lam_bar
        slot.p_bar += w.real - ht_bar
        return z0_bar

    def finalize(self, check_degenerate: bool = True) -> ParamGrad:
        M = self.params.M
        grad = ParamGrad.zeros(M)
        for region in sorted(self.regions):
            slot = self.regions[region]
            dec = slot.dec
            lam, U = dec.lam, dec.U
            diff = lam[None, :] - lam[:, None]
            np.fill_diagonal(diff, 1.0)
            G = (U.conj().T @ slot.U_bar) / np.conj(diff)
            np.fill_diagonal(G, slot.lam_bar)
            # Wr_bar = U^{-H} G U^H
            X = sla.lu_solve(dec.U_lu, G, trans=2, check_finite=False)
            Wr_bar = (X @ U.conj().T).real
            h_bar = sla.lu_solve(dec.Wr_lu, slot.p_bar, trans=1, check_finite=False)
            Wr_bar -= np.outer(h_bar, dec.p)
            grad.dA += np.diag(Wr_bar)
            grad.dW += Wr_bar * dec.d[None, :]
            grad.dh += h_bar
        grad.discarded_segments = self.discarded
        if check_degenerate and self.switches > 0 and self.discarded > 0.5 * self.switches:
            raise DegenerateGradient(
                f"{self.discarded} of {self.switches} switch contributions discarded",
                discarded=self.discarded, switches=self.switches)
        return grad


def _eval_backward(sol: RegionSolution, s, z_bar):
    """Adjoints of ``z(s_j)`` evaluations: returns (ct_bar, lam_bar, ht_bar, s_bar)."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    z_bar = np.atleast_2d(np.asarray(z_bar, dtype=float))
    lam, ct = sol.lambdas, sol.c_tilde
    E = np.exp(np.outer(s, lam))                       # (n, L)
    ct_bar = z_bar.T @ np.conj(E)                      # (M, L)
    proj = z_bar @ np.conj(ct)                         # (n, L)
    lam_bar = np.sum(s[:, None] * np.conj(E) * proj, axis=0)
    ht_bar = z_bar.sum(axis=0)
    zdot = (E * lam[None, :]) @ ct.T                   # (n, M)
    s_bar = np.einsum("nm,nm->n", z_bar, zdot.real)
    return ct_bar, lam_bar, ht_bar, s_bar


def _velocity(sol: RegionSolution, s) -> np.ndarray:
    E = np.exp(np.atleast_1d(s)[:, None] * sol.lambdas[None, :])
    return ((E * sol.lambdas[None, :]) @ sol.c_tilde.T).real


def _switch_factor(sol: RegionSolution, s_switch: float, dim: int):
    """Returns (ds/df factor -1/fdot, tangential flag)."""
    fdot = float(_velocity(sol, s_switch)[0, dim])
    scale = 1.0 + float(np.sum(np.abs(sol.c_tilde[dim] * sol.lambdas)))
    if abs(fdot) <= TANGENT_RTOL * scale:
        return 0.0, True
    return -1.0 / fdot, False


def region_solution_vjp(params: ModelParams, sol: RegionSolution, lam_bar=None, ct_bar=None,
                        ht_bar=None):
    """Gradient of a scalar through one segment's (lam, ctilde, htilde).

    Returns ``(ParamGrad, z0_bar)``.
    """
    L = sol.lambdas.shape[0]
    lam_bar = np.zeros(L, dtype=complex) if lam_bar is None else np.asarray(lam_bar, dtype=complex)
    ct_bar = np.zeros((L, L), dtype=complex) if ct_bar is None else np.asarray(ct_bar, dtype=complex)
    ht_bar = np.zeros(L) if ht_bar is None else np.asarray(ht_bar, dtype=float)
    acc = GradAccumulator(params)
    z0_bar = acc.add_solution_adjoint(sol, ct_bar, lam_bar, ht_bar)
    return acc.finalize(check_degenerate=False), z0_bar


def switch_time_grad(params: ModelParams, sol: RegionSolution, t_switch: float, dim: int,
                     upstream: float):
    """Gradient of ``upstream * t_switch`` with the switch time defined implicitly.

    Returns ``(ParamGrad, z0_bar)``; a tangential crossing yields zeros and
    ``discarded_segments == 1``.
    """
    factor, tangential = _switch_factor(sol, t_switch, dim)
    M = params.M
    if tangential:
        g = ParamGrad.zeros(M)
        g.discarded_segments = 1
        return g, np.zeros(M)
    zb = np.zeros((1, M))
    zb[0, dim] = upstream * factor
    ct_bar, lam_bar, ht_bar, _ = _eval_backward(sol, [t_switch], zb)
    return region_solution_vjp(params, sol, lam_bar, ct_bar, ht_bar)


def trajectory_vjp(params: ModelParams, traj: Trajectory, states_bar, acc: GradAccumulator | None = None,
                   delta_t: float = DELTA_T):
    """Backpropagate ``states_bar`` (gradient per emitted state) through ``traj``.

    With ``acc`` given, contributions are added to it and only the gradient
    with respect to the initial state is returned; otherwise returns
    ``(ParamGrad, z0_bar)``.
    """
    own = acc is None
    if own:
        acc = GradAccumulator(params)
    states_bar = np.asarray(states_bar, dtype=float)
    M = params.M
    e_bar = np.zeros(M)          # adjoint of the next segment's entry state
    tau_bar = 0.0                # adjoint of the next segment's start time
    for seg in reversed(traj.segments):
        sol = seg.sol
        pts_s = []
        pts_bar = []
        tau_acc = 0.0
        if seg.emit_stop > seg.emit_start:
            s_emit = traj.times[seg.emit_start:seg.emit_stop] - seg.t_start
            zb = states_bar[seg.emit_start:seg.emit_stop]
            pts_s.append(s_emit)
            pts_bar.append(zb)
        if seg.t_switch is not None:
            s_exit = seg.t_switch + delta_t
            s_bar_k = tau_bar
            if np.any(e_bar):
                s_bar_k += float(e_bar @ _velocity(sol, s_exit)[0])
                pts_s.append(np.array([s_exit]))
                pts_bar.append(e_bar[None, :])
            tau_acc += tau_bar
            acc.switches += 1
            if s_bar_k != 0.0:
                factor, tangential = _switch_factor(sol, seg.t_switch, seg.dim)
                if tangential:
                    acc.discarded += 1
                else:
                    zb = np.zeros((1, M))
                    zb[0, seg.dim] = s_bar_k * factor
                    pts_s.append(np.array([seg.t_switch]))
                    pts_bar.append(zb)
        if pts_s:
            s_all = np.concatenate(pts_s)
            bar_all = np.concatenate(pts_bar, axis=0)
            ct_bar, lam_bar, ht_bar, s_bar = _eval_backward(sol, s_all, bar_all)
            if seg.emit_stop > seg.emit_start:
                n = seg.emit_stop - seg.emit_start
                tau_acc -= float(np.sum(s_bar[:n]))
            e_bar = acc.add_solution_adjoint(sol, ct_bar, lam_bar, ht_bar)
        else:
            e_bar = np.zeros(M)
        tau_bar = tau_acc
    if own:
        return acc.finalize(), e_bar
    return e_bar
