"""Switching-time search and piecewise-analytic trajectory computation.

The first zero crossing of the ReLU coordinates inside a region is found by a
depth-first branch-and-prune search with interval Newton contraction. Each
search node carries a time interval and the bitmask of ReLU coordinates that
may still have a root there.
"""
from __future__ import annotations

import csv
import math
import time as _time
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import CPLRNNError, SearchInconclusive
from .interval import (
    INF, MAX_WIDTH, combine_dim, derivative_coefficients, iv_div, iv_intersect,
    iv_mul, iv_add, iv_sub, point_value, term_enclosures,
)
from .model import (ModelParams, RegionSolution, eval_point, eval_time_derivative, region_of,
                    region_solution, vector_field)

DELTA_T = 1e-4
MAX_DEPTH = 64
FLANK = 1e-9

PRUNE, STORE, BRANCH = 0, 1, 2
NONE_FOUND, FOUND, INCONCLUSIVE = 0, 1, 2


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _refine_root(i, lo, hi, increasing, lam_r, lre, lim, cr, ca, cb, hh, dr, da, db, hz):
    """Safeguarded Newton on a bracket known to hold a unique simple root."""
    t = 0.5 * (lo + hi)
    for _ in range(200):
        ft = point_value(i, t, lam_r, lre, lim, cr, ca, cb, hh)
        if ft == 0.0:
            return t
        if (ft < 0.0) == increasing:
            lo = t
        else:
            hi = t
        dft = point_value(i, t, lam_r, lre, lim, dr, da, db, hz)
        tn = t - ft / dft if dft != 0.0 else 0.5 * (lo + hi)
        if not (lo < tn < hi):
            tn = 0.5 * (lo + hi)
        if abs(tn - t) <= 4.0 * np.finfo(np.float64).eps * max(abs(t), 1e-300) or hi - lo <= 0.0:
            return tn
        t = tn
    return t


@njit(cache=True)
def _flank_root(i, a, b, lam_r, lre, lim, cr, ca, cb, hh):
    """Bisection on [a, b] given opposite-signed endpoint values."""
    fa = point_value(i, a, lam_r, lre, lim, cr, ca, cb, hh)
    for _ in range(200):
        m = 0.5 * (a + b)
        if m <= a or m >= b:
            break
        fm = point_value(i, m, lam_r, lre, lim, cr, ca, cb, hh)
        if fm == 0.0:
            return m
        if (fm < 0.0) == (fa < 0.0):
            a = m
            fa = fm
        else:
            b = m
    return 0.5 * (a + b)


@njit(cache=True)
def _contract(xlo, xhi, mask, t_min, lam_r, lre, lim, cr, ca, cb, hh, dr, da, db, hz,
              er, ec, cc, sc, erm, ecm, ccm, scm):
    """One interval Newton step over all candidate coordinates.

    Returns (decision, new_lo, new_hi, new_mask, t_min, root_dim).
    """
    m = 0.5 * (xlo + xhi)
    term_enclosures(xlo, xhi, lam_r, lre, lim, er, ec, cc, sc)
    term_enclosures(m, m, lam_r, lre, lim, erm, ecm, ccm, scm)
    P = cr.shape[0]
    any_alive = False
    new_mask = 0
    ulo = INF
    uhi = -INF
    root_dim = -1
    for i in range(P):
        if not (mask >> i) & 1:
            continue
        flo, fhi = combine_dim(i, cr, ca, cb, hh, er, ec, cc, sc)
        fmlo, fmhi = combine_dim(i, cr, ca, cb, hh, erm, ecm, ccm, scm)
        dlo, dhi = combine_dim(i, dr, da, db, hz, er, ec, cc, sc)
        # centred form f(m) + f'(X)(X - m), intersected with the natural one
        wlo, whi = iv_sub(xlo, xhi, m, m)
        plo, phi = iv_mul(dlo, dhi, wlo, whi)
        clo, chi = iv_add(fmlo, fmhi, plo, phi)
        flo, fhi = iv_intersect(flo, fhi, clo, chi)
        if not (flo <= 0.0 <= fhi):
            continue
        n, q1lo, q1hi, q2lo, q2hi = iv_div(fmlo, fmhi, dlo, dhi)
        if n == 0:
            nlo, nhi = xlo, xhi
            n1lo, n1hi = xlo, xhi
            n2lo, n2hi = INF, -INF
        else:
            n1lo, n1hi = iv_sub(m, m, q1lo, q1hi)
            if n == 2:
                n2lo, n2hi = iv_sub(m, m, q2lo, q2hi)
            else:
                n2lo, n2hi = INF, -INF
        a1, b1 = iv_intersect(n1lo, n1hi, xlo, xhi)
        a2, b2 = iv_intersect(n2lo, n2hi, xlo, xhi)
        e1 = not (a1 <= b1)
        e2 = not (a2 <= b2)
        if e1 and e2:
            continue
        any_alive = True
        unique = (n == 1 and (dlo > 0.0 or dhi < 0.0)
                  and n1lo > xlo and n1hi < xhi)
        if unique:
            r = _refine_root(i, a1, b1, dlo > 0.0, lam_r, lre, lim, cr, ca, cb, hh, dr, da, db, hz)
            if r < t_min:
                t_min = r
                root_dim = i
            continue
        new_mask |= 1 << i
        if not e1:
            ulo = min(ulo, a1)
            uhi = max(uhi, b1)
        if not e2:
            ulo = min(ulo, a2)
            uhi = max(uhi, b2)
    if not any_alive:
        return PRUNE, xlo, xhi, 0, t_min, root_dim
    if new_mask == 0:
        return STORE, xlo, xhi, 0, t_min, root_dim
    return BRANCH, ulo, min(uhi, t_min), new_mask, t_min, root_dim


@njit(cache=True)
def _first_root_kernel(lam_r, lre, lim, cr, ca, cb, hh, t_lo, t_hi, max_width, max_depth, flank):
    """Earliest sign-changing root over all rows of ``cr``/``ca``/``cb``.

    Returns (status, t_root, row, n_nodes).
    """
    P = cr.shape[0]
    if P == 0 or not (t_lo < t_hi):
        return NONE_FOUND, INF, -1, 0
    dr, da, db = derivative_coefficients(lam_r, lre, lim, cr, ca, cb)
    hz = np.zeros_like(hh)
    nr = lam_r.shape[0]
    nc = lre.shape[0]
    er = np.empty((nr, 2))
    erm = np.empty((nr, 2))
    ec = np.empty((nc, 2))
    cc = np.empty((nc, 2))
    sc = np.empty((nc, 2))
    ecm = np.empty((nc, 2))
    ccm = np.empty((nc, 2))
    scm = np.empty((nc, 2))

    n_chunks = max(1, int(math.ceil((t_hi - t_lo) / max_width)))
    cap = n_chunks + 2 * max_depth + 16
    s_lo = np.empty(cap)
    s_hi = np.empty(cap)
    s_mask = np.empty(cap, dtype=np.int64)
    s_depth = np.empty(cap, dtype=np.int64)
    full = (1 << P) - 1
    width = (t_hi - t_lo) / n_chunks
    top = 0
    for k in range(n_chunks - 1, -1, -1):
        s_lo[top] = t_lo + k * width
        s_hi[top] = t_hi if k == n_chunks - 1 else t_lo + (k + 1) * width
        s_mask[top] = full
        s_depth[top] = 0
        top += 1

    t_best = INF
    dim_best = -1
    inconclusive = False
    n_nodes = 0
    while top > 0:
        top -= 1
        xlo = s_lo[top]
        xhi = s_hi[top]
        mask = s_mask[top]
        depth = s_depth[top]
        if xlo > t_best:
            break
        n_nodes += 1
        xhi = min(xhi, t_best)
        small = (xhi - xlo) <= 1e-10 * max(1.0, abs(xhi))
        if small or depth >= max_depth:
            # undecidable by contraction: accept only genuine sign changes
            a = max(t_lo, xlo - flank)
            b = min(t_hi, xhi + flank)
            for i in range(P):
                if not (mask >> i) & 1:
                    continue
                fa = point_value(i, a, lam_r, lre, lim, cr, ca, cb, hh)
                fb = point_value(i, b, lam_r, lre, lim, cr, ca, cb, hh)
                if fa != fa or fb != fb:
                    inconclusive = True
                    continue
                if (fa < 0.0 and fb > 0.0) or (fa > 0.0 and fb < 0.0):
                    r = _flank_root(i, a, b, lam_r, lre, lim, cr, ca, cb, hh)
                    if r < t_best:
                        t_best = r
                        dim_best = i
            continue
        dec, nlo, nhi, nmask, tmin, rdim = _contract(
            xlo, xhi, mask, t_best, lam_r, lre, lim, cr, ca, cb, hh, dr, da, db, hz,
            er, ec, cc, sc, erm, ecm, ccm, scm)
        if rdim >= 0 and tmin < t_best:
            t_best = tmin
            dim_best = rdim
        if dec != BRANCH:
            continue
        if not (nlo <= nhi):
            continue
        mid = 0.5 * (nlo + nhi)
        if top + 2 > cap:
            inconclusive = True
            continue
        # right half first so the left half is expanded next
        s_lo[top] = mid
        s_hi[top] = nhi
        s_mask[top] = nmask
        s_depth[top] = depth + 1
        top += 1
        s_lo[top] = nlo
        s_hi[top] = mid
        s_mask[top] = nmask
        s_depth[top] = depth + 1
        top += 1
    if dim_best >= 0:
        return FOUND, t_best, dim_best, n_nodes
    if inconclusive:
        return INCONCLUSIVE, INF, -1, n_nodes
    return NONE_FOUND, INF, -1, n_nodes


# ---------------------------------------------------------------------------
# Python API
# ---------------------------------------------------------------------------

@dataclass
class SearchNode:
    lo: float
    hi: float
    dims: frozenset
    depth: int = 0


@dataclass
class ContractResult:
    decision: str
    node: SearchNode
    root: float | None
    root_dim: int | None


def _relu_layout(sol: RegionSolution, relu_start: int):
    terms = sol.terms
    rows = slice(relu_start, None)
    cr, ca, cb, hh = terms.coefficient_intervals(rows)
    return terms, cr, ca, cb, hh


def newton_contract(sol: RegionSolution, node: SearchNode, t_min_so_far: float = INF,
                    relu_start: int | None = None) -> ContractResult:
    """Single interval Newton step; ``node.dims`` hold coordinate indices."""
    if relu_start is None:
        relu_start = min(node.dims)
    terms, cr, ca, cb, hh = _relu_layout(sol, relu_start)
    dr, da, db = derivative_coefficients(terms.lam_r, terms.lam_c_re, terms.lam_c_im, cr, ca, cb)
    mask = 0
    for d in node.dims:
        mask |= 1 << (d - relu_start)
    nr, nc = terms.lam_r.shape[0], terms.lam_c_re.shape[0]
    bufs = [np.empty((nr, 2)), np.empty((nc, 2)), np.empty((nc, 2)), np.empty((nc, 2)),
            np.empty((nr, 2)), np.empty((nc, 2)), np.empty((nc, 2)), np.empty((nc, 2))]
    dec, lo, hi, nmask, tmin, rdim = _contract(
        node.lo, node.hi, mask, t_min_so_far, terms.lam_r, terms.lam_c_re, terms.lam_c_im,
        cr, ca, cb, hh, dr, da, db, np.zeros_like(hh), *bufs)
    dims = frozenset(relu_start + i for i in range(cr.shape[0]) if (nmask >> i) & 1)
    name = {PRUNE: "prune", STORE: "store", BRANCH: "branch"}[dec]
    root = tmin if rdim >= 0 else None
    return ContractResult(name, SearchNode(lo, hi, dims, node.depth + 1), root,
                          None if rdim < 0 else relu_start + rdim)


def first_root(sol: RegionSolution, window, relu_start: int, max_width: float = MAX_WIDTH,
               max_depth: int = MAX_DEPTH):
    """Earliest sign-changing zero of a ReLU coordinate in ``window``.

    Returns ``(t, dim)`` with ``dim`` a full coordinate index, or ``None``.
    """
    lo, hi = float(window[0]), float(window[1])
    terms, cr, ca, cb, hh = _relu_layout(sol, relu_start)
    status, t, row, _ = _first_root_kernel(
        terms.lam_r, terms.lam_c_re, terms.lam_c_im, cr, ca, cb, hh,
        lo, hi, max_width, max_depth, FLANK)
    if status == FOUND:
        return float(t), relu_start + int(row)
    if status == INCONCLUSIVE:
        raise SearchInconclusive("root search could not resolve all candidate intervals")
    return None


def next_switch(sol: RegionSolution, region: int, window, relu_start: int,
                max_width: float = MAX_WIDTH, max_retries: int = 8):
    """Earliest crossing that leaves ``region``; same return convention as ``first_root``.

    The analytic solution reproduces its entry state only up to rounding, so a
    coordinate that enters exactly on its boundary can show a zero right at the
    start while moving further into the side its region bit already assigns. Such
    roots are skipped and the search resumes slightly past them.
    """
    lo, hi = float(window[0]), float(window[1])
    root = None
    for k in range(max_retries):
        root = first_root(sol, (lo, hi), relu_start, max_width=max_width)
        if root is None:
            return None
        t, dim = root
        on = (region >> (dim - relu_start)) & 1
        v = eval_time_derivative(sol, dim, t)
        if v == 0.0 or (v < 0.0 if on else v > 0.0):
            return root
        lo = t + 1e-12 * 10.0 ** k * (1.0 + abs(t))
        if lo >= hi:
            return None
    return root


@dataclass
class SwitchEvent:
    t_abs: float
    dim: int
    region_before: int
    region_after: int
    z_at_switch: np.ndarray


@dataclass
class Segment:
    """One region visit; ``t_switch`` is segment-relative (None if open-ended)."""

    sol: RegionSolution
    t_start: float
    emit_start: int
    emit_stop: int
    t_switch: float | None = None
    dim: int | None = None
    perturbed: bool = False


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    events: list = field(default_factory=list)
    truncated: bool = False
    segments: list = field(default_factory=list)
    t0: float = 0.0
    reason: str = ""

    def to_csv(self, path, events_path=None):
        M = self.states.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"z{i + 1}" for i in range(M)])
            for t, z in zip(self.times, self.states):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in z])
        if events_path is not None:
            with open(events_path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t", "dim", "region_before", "region_after"])
                for ev in self.events:
                    w.writerow([repr(ev.t_abs), ev.dim + 1, ev.region_before, ev.region_after])


def entry_region(params: ModelParams, z) -> int:
    """Region a trajectory enters from ``z``.

    Same as :func:`region_of` except that a ReLU coordinate exactly at zero
    counts as active when it is moving upward; the field does not depend on
    that bit there, so the direction is unambiguous.
    """
    region = region_of(params, z)
    on_boundary = [i for i in range(params.P) if z[params.relu_start + i] == 0.0]
    if on_boundary:
        v = vector_field(params, z)
        for i in on_boundary:
            if v[params.relu_start + i] > 0.0:
                region |= 1 << i
    return region


class SolverError(CPLRNNError):
    """Wraps a solver failure together with the partial trajectory."""

    code = "SOLVER_ERROR"


def solve_trajectory(params: ModelParams, z0, times, t0: float | None = None,
                     max_events: int = 100_000, max_wall: float | None = None,
                     delta_t: float = DELTA_T, allow_perturb: bool = True,
                     max_width: float = MAX_WIDTH, blowup: float = 1e10) -> Trajectory:
    """States at ``times`` from ``z0`` at ``t0`` (default ``times[0]``)."""
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("times must be a non-empty 1-d array")
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    t0 = float(times[0]) if t0 is None else float(t0)
    if times[0] < t0:
        raise ValueError("requested times precede the initial time")
    M = params.M
    relu_start = params.relu_start
    states = np.full((times.size, M), np.nan)
    traj = Trajectory(times=times, states=states, t0=t0)
    z = np.asarray(z0, dtype=float).copy()
    t_seg = t0
    n_emit = 0
    t_end = float(times[-1])
    started = _time.perf_counter()
    region = entry_region(params, z)
    while n_emit < times.size:
        try:
            sol = region_solution(params, z, t_origin=t_seg, region=region, allow_perturb=allow_perturb)
            remaining = t_end - t_seg
            root = None
            if params.P > 0 and remaining > 0.0:
                root = next_switch(sol, region, (0.0, remaining), relu_start, max_width=max_width)
        except CPLRNNError as err:
            traj.truncated = True
            traj.reason = err.code
            raise SolverError(str(err), trajectory=traj, cause=err) from err
        seg = Segment(sol=sol, t_start=t_seg, emit_start=n_emit, emit_stop=n_emit,
                      perturbed=sol.dec.perturbed)
        if root is None:
            stop = times.size
        else:
            t_s, dim = root
            stop = int(np.searchsorted(times, t_seg + t_s + delta_t, side="left"))
            seg.t_switch = t_s
            seg.dim = dim
        if stop > n_emit:
            states[n_emit:stop] = eval_point(sol, times[n_emit:stop] - t_seg)
        seg.emit_stop = stop
        n_emit = stop
        traj.segments.append(seg)
        if root is None:
            break
        z_next = eval_point(sol, t_s + delta_t)
        new_region = entry_region(params, z_next)
        traj.events.append(SwitchEvent(t_abs=t_seg + t_s, dim=dim, region_before=region,
                                       region_after=new_region,
                                       z_at_switch=eval_point(sol, t_s)))
        if n_emit >= times.size:
            break
        z = z_next
        region = new_region
        t_seg = t_seg + t_s + delta_t
        if not np.all(np.isfinite(z)) or np.max(np.abs(z)) > blowup:
            traj.truncated = True
            traj.reason = "DIVERGED"
            break
        if len(traj.events) >= max_events:
            traj.truncated = True
            traj.reason = "MAX_EVENTS"
            break
        if max_wall is not None and _time.perf_counter() - started > max_wall:
            traj.truncated = True
            traj.reason = "MAX_WALL"
            break
    if not traj.truncated and not np.all(np.isfinite(states)):
        traj.truncated = True
        traj.reason = "DIVERGED"
    return traj
