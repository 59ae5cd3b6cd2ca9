"""Fixed points, limit cycles and their stability for trained models."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import least_squares

from .errors import (CPLRNNError, InvalidItinerary, NoConvergence, SearchInconclusive,
                     SingularRegionMatrix)
from .events import Trajectory, first_root
from .model import (COND_LIMIT, ModelParams, eval_point, region_matrix, region_of,
                    region_solution, vector_field)

KIND_TOL = 1e-10


@dataclass
class FixedPoint:
    z_star: np.ndarray
    region: int
    is_real: bool
    eigenvalues: np.ndarray
    kind: str

    def to_dict(self) -> dict:
        return {"z": self.z_star.tolist(), "region": self.region, "is_real": self.is_real,
                "kind": self.kind,
                "eigenvalues": [[float(v.real), float(v.imag)] for v in self.eigenvalues]}


def classify(eigenvalues, tol: float = KIND_TOL) -> str:
    re = eigenvalues.real
    spiral = bool(np.any(np.abs(eigenvalues.imag) > tol))
    if np.any(np.abs(re) <= tol):
        return "center"
    if np.all(re < 0):
        return "stable spiral" if spiral else "stable node"
    if np.all(re > 0):
        return "unstable spiral" if spiral else "unstable node"
    return "saddle"


def in_region(params: ModelParams, z, region: int) -> bool:
    """Boundary-inclusive membership test."""
    for i in range(params.P):
        v = z[params.relu_start + i]
        if (region >> i) & 1:
            if v < 0:
                return False
        elif v > 0:
            return False
    return True


def candidate_fixed_point(params: ModelParams, region: int) -> FixedPoint:
    Wr = region_matrix(params, region)
    if np.linalg.cond(Wr) > COND_LIMIT:
        raise SingularRegionMatrix(f"region {region} matrix is singular", region=region)
    z = np.linalg.solve(Wr, -params.h)
    eig = np.linalg.eigvals(Wr)
    return FixedPoint(z, region, in_region(params, z, region), eig, classify(eig))


def _region_of_signs(params: ModelParams, z) -> int:
    return region_of(params, z)


def _dedupe_add(found: list, fp: FixedPoint, tol: float = 1e-6):
    for g in found:
        if np.linalg.norm(g.z_star - fp.z_star) < tol * (1.0 + np.linalg.norm(fp.z_star)):
            return
    found.append(fp)


def enumerate_fixed_points(params: ModelParams) -> list:
    """All real fixed points by visiting every region."""
    found: list = []
    for region in range(1 << params.P):
        try:
            fp = candidate_fixed_point(params, region)
        except SingularRegionMatrix:
            continue
        if fp.is_real:
            _dedupe_add(found, fp)
    return found


def find_fixed_points(params: ModelParams, max_iters: int | None = None, restarts: int = 1000,
                      rng: np.random.Generator | None = None) -> list:
    """Hop between regions guided by virtual fixed points.

    Each run starts in a region not evaluated before; the sign pattern of a
    virtual solution selects the next region. A run ends on a real point, a
    repeated region or after ``max_iters`` hops. Regions are evaluated at most
    once, so with ``restarts >= 2**P`` the search is exhaustive.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    n_regions = 1 << params.P
    if max_iters is None:
        max_iters = max(10, 2 * params.P)
    cache: dict[int, FixedPoint | None] = {}
    found: list = []

    def evaluate(region):
        if region not in cache:
            try:
                cache[region] = candidate_fixed_point(params, region)
            except SingularRegionMatrix:
                cache[region] = None
        return cache[region]

    untried = None
    for _ in range(restarts):
        if len(cache) >= n_regions:
            break
        if n_regions <= 1 << 16:
            if untried is None:
                untried = rng.permutation(n_regions)
                pos = 0
            while pos < n_regions and int(untried[pos]) in cache:
                pos += 1
            if pos >= n_regions:
                break
            region = int(untried[pos])
        else:
            region = int(rng.integers(0, n_regions))
        seen = set()
        for _ in range(max_iters):
            if region in seen:
                break
            seen.add(region)
            fp = evaluate(region)
            if fp is None:
                break
            if fp.is_real:
                _dedupe_add(found, fp)
                break
            region = _region_of_signs(params, fp.z_star)
    return found


# ---------------------------------------------------------------------------
# limit cycles
# ---------------------------------------------------------------------------

@dataclass
class CycleSolution:
    regions: list
    dims: list
    y: np.ndarray
    flight_times: np.ndarray
    period: float
    multipliers: np.ndarray
    stable: bool
    z0: np.ndarray
    residual: float

    def to_dict(self) -> dict:
        return {"regions": list(map(int, self.regions)), "dims": list(map(int, self.dims)),
                "y": self.y.tolist(), "z0": self.z0.tolist(),
                "flight_times": self.flight_times.tolist(), "period": self.period,
                "multipliers": [[float(v.real), float(v.imag)] for v in self.multipliers],
                "stable": self.stable, "residual": self.residual}


def _check_itinerary(params: ModelParams, regions, dims):
    r = len(regions)
    if r < 1 or len(dims) != r:
        raise InvalidItinerary("regions and dims must be non-empty and of equal length")
    for i in range(r):
        d = dims[i]
        if not params.relu_start <= d < params.M:
            raise InvalidItinerary(f"dim {d} is not a ReLU coordinate")
        bit = 1 << (d - params.relu_start)
        nxt = regions[(i + 1) % r]
        if regions[i] ^ nxt != bit:
            raise InvalidItinerary(f"crossing dim {d} cannot take region {regions[i]} to {nxt}")


def _propagators(params, regions):
    out = []
    for k in regions:
        Wr = region_matrix(params, k)
        p = np.linalg.solve(Wr, params.h)
        out.append((Wr, p))
    return out


def _flow(props, z_start, T):
    """States after each flight; returns list of (z_end, expm)."""
    res = []
    z = z_start
    for (Wr, p), t in zip(props, T):
        E = sla.expm(Wr * t)
        z = E @ (z + p) - p
        res.append((z, E))
    return res


def floquet_multipliers(params: ModelParams, regions, flight_times) -> np.ndarray:
    """Eigenvalues of the product of region propagators over one period.

    The vector field is continuous across boundaries, so no jump matrices enter.
    """
    Phi = np.eye(params.M)
    for k, t in zip(regions, flight_times):
        Phi = sla.expm(region_matrix(params, k) * t) @ Phi
    return np.linalg.eigvals(Phi)


def _is_stable(mult: np.ndarray) -> bool:
    idx = int(np.argmin(np.abs(mult - 1.0)))
    rest = np.delete(mult, idx)
    return bool(rest.size == 0 or np.max(np.abs(rest)) < 1.0)


def find_limit_cycle(params: ModelParams, regions, dims, z_init, T_init, max_nfev: int | None = None,
                     tol: float = 1e-8) -> CycleSolution:
    """Solve the periodic boundary-value problem for a region itinerary.

    ``regions[i]`` is left through coordinate ``dims[i]``; the orbit starts on
    the zero set of ``dims[-1]``. Unknowns are the remaining ``M - 1``
    coordinates of the start point and ``log`` flight times.
    """
    regions = [int(k) for k in regions]
    dims = [int(d) for d in dims]
    _check_itinerary(params, regions, dims)
    M = params.M
    r = len(regions)
    pin = dims[-1]
    free = np.array([i for i in range(M) if i != pin])
    T_init = np.asarray(T_init, dtype=float)
    if T_init.shape != (r,) or np.any(T_init <= 0):
        raise ValueError("T_init must hold r positive flight times")
    props = _propagators(params, regions)

    def unpack(x):
        z0 = np.zeros(M)
        z0[free] = x[:M - 1]
        return z0, np.exp(x[M - 1:])

    def residual(x):
        z0, T = unpack(x)
        states = _flow(props, z0, T)
        res = np.empty(M - 1 + r)
        for i, (z, _) in enumerate(states):
            res[i] = z[dims[i]]
        res[r:] = (states[-1][0] - z0)[free]
        return res

    def jacobian(x):
        z0, T = unpack(x)
        states = _flow(props, z0, T)
        J = np.zeros((M - 1 + r, M - 1 + r))
        # running derivatives of the current state w.r.t. free start coords and log-times
        dz = np.zeros((M, M - 1 + r))
        dz[free, np.arange(M - 1)] = 1.0
        for i, ((Wr, p), (z, E)) in enumerate(zip(props, states)):
            dz = E @ dz
            v = Wr @ (z + p)       # = Wr z + h
            dz[:, M - 1 + i] += v * T[i]
            J[i] = dz[dims[i]]
        J[r:] = dz[free]
        J[r:, :M - 1] -= np.eye(M)[free][:, free]
        return J

    x0 = np.concatenate([np.asarray(z_init, dtype=float)[free], np.log(T_init)])
    if max_nfev is None:
        max_nfev = 200 * x0.size
    try:
        sol = least_squares(residual, x0, jac=jacobian, method="lm", xtol=1e-15, ftol=1e-15,
                            gtol=1e-15, max_nfev=max_nfev)
    except (ValueError, np.linalg.LinAlgError, FloatingPointError) as err:
        raise NoConvergence(f"solver failed: {err}") from err
    z0, T = unpack(sol.x)
    scale = 1.0 + np.linalg.norm(z0)
    res = float(np.max(np.abs(residual(sol.x)))) if np.all(np.isfinite(sol.x)) else math.inf
    if not res < tol * scale:
        raise NoConvergence(f"residual {res:.3g} above tolerance", residual=res)
    _validate_cycle(params, regions, dims, z0, T)
    mult = floquet_multipliers(params, regions, T)
    return CycleSolution(regions, dims, z0[free].copy(), T, float(np.sum(T)), mult,
                         _is_stable(mult), z0, res)


def _validate_cycle(params, regions, dims, z0, T):
    """Each leg must stay in its region and cross exactly at its end."""
    z = z0
    r = len(regions)
    for i in range(r):
        k = regions[i]
        sol = region_solution(params, z, region=k, allow_perturb=True)
        mid = eval_point(sol, 0.5 * T[i])
        if region_of(params, mid) != k:
            raise InvalidItinerary(f"leg {i} does not stay in region {k}")
        margin = 1e-7 * T[i]
        try:
            root = first_root(sol, (margin, T[i] * (1.0 - 1e-7)), params.relu_start)
        except SearchInconclusive as err:
            raise InvalidItinerary(f"leg {i}: {err}") from err
        if root is not None:
            raise InvalidItinerary(f"leg {i} crosses dim {root[1]} early at {root[0]:.6g}")
        z = eval_point(sol, T[i])
        vel = vector_field(params, z)[dims[i]]
        bit_next = (regions[(i + 1) % r] >> (dims[i] - params.relu_start)) & 1
        if (vel > 0) != bool(bit_next):
            raise InvalidItinerary(f"leg {i} crosses dim {dims[i]} in the wrong direction")


def _canonical(tokens):
    r = len(tokens)
    rots = [tuple(tokens[i:] + tokens[:i]) for i in range(r)]
    return min(rots)


def _minimal_period(tokens) -> int:
    r = len(tokens)
    for p in range(1, r + 1):
        if r % p == 0 and tokens == tokens[:p] * (r // p):
            return p
    return r


def propose_itineraries(params: ModelParams, traj: Trajectory, max_len: int = 16,
                        max_candidates: int = 20) -> list:
    """Candidate itineraries from consecutive repeats of (region, dim) patterns.

    Returns a list of dicts with ``regions``, ``dims``, ``z_init`` and
    ``T_init``; the most recent repeats are preferred.
    """
    ev = traj.events
    if len(ev) < 2:
        return []
    tokens = [(e.region_before, e.dim) for e in ev]
    n = len(tokens)
    out = []
    keys = set()
    for end in range(n, 0, -1):
        for r in range(1, max_len + 1):
            j = end - 2 * r
            if j < 1:
                break
            a = tokens[j:j + r]
            if a != tokens[j + r:end] or _minimal_period(a) != r:
                continue
            key = _canonical(a)
            if key in keys:
                continue
            keys.add(key)
            j0 = j + r - 1          # event that opens the last full repeat
            seq = list(range(j0 + 1, j0 + 1 + r))
            out.append({
                "regions": [ev[s].region_before for s in seq],
                "dims": [ev[s].dim for s in seq],
                "z_init": np.asarray(ev[j0].z_at_switch, dtype=float).copy(),
                "T_init": np.array([ev[s].t_abs - ev[s - 1].t_abs for s in seq]),
            })
            if len(out) >= max_candidates:
                return out
    return out


def analysis_report(fixed_points, cycles) -> dict:
    return {"fixed_points": [fp.to_dict() for fp in fixed_points],
            "cycles": [c.to_dict() for c in cycles]}


def write_report(path, fixed_points, cycles):
    with open(path, "w") as fh:
        json.dump(analysis_report(fixed_points, cycles), fh, indent=2)


def search_cycles(params: ModelParams, traj: Trajectory, **kw) -> list:
    """Run find_limit_cycle on every proposed itinerary; failures are skipped."""
    cycles = []
    for cand in propose_itineraries(params, traj, **kw):
        try:
            cyc = find_limit_cycle(params, cand["regions"], cand["dims"], cand["z_init"],
                                   cand["T_init"])
        except CPLRNNError:
            continue
        if not any(_same_cycle(cyc, c) for c in cycles):
            cycles.append(cyc)
    return cycles


def _same_cycle(a: CycleSolution, b: CycleSolution) -> bool:
    if abs(a.period - b.period) > 1e-6 * max(a.period, b.period):
        return False
    ta = list(zip(a.regions, a.dims))
    tb = list(zip(b.regions, b.dims))
    return _canonical(ta) == _canonical(tb)
