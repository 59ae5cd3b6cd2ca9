"""Continuous-time PLRNN parameters and per-region analytic solutions.

The vector field is ``dz/dt = A z + W phi(z) + h`` with ``A`` diagonal and a
ReLU on the last ``P`` coordinates. Inside a linear region the flow is
``z(t) = sum_l ctilde[:, l] exp(lambda_l t) + htilde``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .errors import ImaginaryResidue, NearDefective, SingularRegionMatrix

COND_LIMIT = 1e12
GAP_RTOL = 1e-8
RESIDUE_RTOL = 1e-6


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Immutable cPLRNN parameters. ``A`` holds the diagonal of the A matrix."""

    A: np.ndarray
    W: np.ndarray
    h: np.ndarray
    P: int
    N: int
    version: int = 0
    # region -> RegionDecomposition, filled lazily
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        A = np.array(self.A, dtype=float).reshape(-1)
        M = A.shape[0]
        W = np.array(self.W, dtype=float).reshape(M, M)
        h = np.array(self.h, dtype=float).reshape(M)
        for arr in (A, W, h):
            if not np.all(np.isfinite(arr)):
                raise ValueError("model parameters must be finite")
            arr.setflags(write=False)
        if not 0 <= self.P <= M:
            raise ValueError(f"need 0 <= P <= M, got P={self.P}, M={M}")
        if not 1 <= self.N <= M:
            raise ValueError(f"need 1 <= N <= M, got N={self.N}, M={M}")
        if self.P > 62:
            raise ValueError("at most 62 piecewise-linear units are supported")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "h", h)

    @property
    def M(self) -> int:
        return self.A.shape[0]

    @property
    def relu_start(self) -> int:
        return self.M - self.P

    def replace(self, **changes) -> "ModelParams":
        kw = dict(A=self.A, W=self.W, h=self.h, P=self.P, N=self.N, version=self.version + 1)
        kw.update(changes)
        return ModelParams(**kw)

    # ---- checkpoint format -------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "M": self.M, "P": self.P, "N": self.N,
            "A": [float(x) for x in self.A],
            "W": [[float(x) for x in row] for row in self.W],
            "h": [float(x) for x in self.h],
            "version": self.version,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        params = cls(A=d["A"], W=d["W"], h=d["h"], P=int(d["P"]), N=int(d["N"]),
                     version=int(d.get("version", 0)))
        if params.M != int(d["M"]):
            raise ValueError("checkpoint M does not match parameter shapes")
        return params

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, default=_json17))

    @classmethod
    def load(cls, path) -> "ModelParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _json17(x):
    return float(x)


# json writes repr() floats, which round-trip exactly (>= 17 significant digits
# where needed); nothing else to do for the checkpoint precision requirement.


def d_vector(params: ModelParams, region: int) -> np.ndarray:
    d = np.ones(params.M)
    for i in range(params.P):
        d[params.relu_start + i] = (region >> i) & 1
    return d


def region_of(params: ModelParams, z) -> int:
    """Bitmask of strictly positive ReLU coordinates (z == 0 counts as off)."""
    z = np.asarray(z, dtype=float)
    bits = 0
    for i in range(params.P):
        if z[params.relu_start + i] > 0.0:
            bits |= 1 << i
    return bits


def region_matrix(params: ModelParams, region: int) -> np.ndarray:
    return np.diag(params.A) + params.W * d_vector(params, region)[None, :]


def vector_field(params: ModelParams, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    phi = z.copy()
    phi[params.relu_start:] = np.maximum(phi[params.relu_start:], 0.0)
    return params.A * z + params.W @ phi + params.h


def perturb_for_diagonalizability(params: ModelParams, region: int, magnitude: float = 1e-7,
                                  rng=None) -> ModelParams:
    """Add independent uniform noise of relative size ``magnitude`` to W.

    ``region`` only seeds the default generator so retries are reproducible.
    """
    if magnitude == 0.0:
        return params
    if rng is None:
        rng = np.random.default_rng(int(region) + 7919 * params.version)
    scale = magnitude * max(np.linalg.norm(params.W), 1.0)
    W = params.W + rng.uniform(-scale, scale, size=params.W.shape)
    return params.replace(W=W)


# ---------------------------------------------------------------------------
# per-region eigendecomposition
# ---------------------------------------------------------------------------

def _pair_conjugates(lam: np.ndarray, U: np.ndarray):
    """Make eigenpairs exactly conjugate-symmetric.

    Returns (lam, U, partner) where ``partner[l]`` is the index of the
    conjugate of eigenvalue ``l`` (itself for real ones).
    """
    M = lam.shape[0]
    lam = lam.astype(complex).copy()
    U = U.astype(complex).copy()
    partner = np.full(M, -1)
    scale = max(np.max(np.abs(lam)), 1.0)
    tol = 1e-10 * scale
    for l in range(M):
        if partner[l] >= 0:
            continue
        if abs(lam[l].imag) <= tol:
            lam[l] = lam[l].real
            col = U[:, l]
            # rotate so the eigenvector is real
            k = np.argmax(np.abs(col))
            col = col * (abs(col[k]) / col[k]) if col[k] != 0 else col
            U[:, l] = col.real
            partner[l] = l
            continue
        cands = [j for j in range(M) if j != l and partner[j] < 0]
        j = min(cands, key=lambda j: abs(lam[j] - np.conj(lam[l])))
        if abs(lam[j] - np.conj(lam[l])) > 1e-6 * scale:
            raise NearDefective("unpaired complex eigenvalue")
        pos, neg = (l, j) if lam[l].imag > 0 else (j, l)
        lp = 0.5 * (lam[pos] + np.conj(lam[neg]))
        up = U[:, pos]
        lam[pos], lam[neg] = lp, np.conj(lp)
        U[:, pos], U[:, neg] = up, np.conj(up)
        partner[pos], partner[neg] = neg, pos
    return lam, U, partner


class RegionDecomposition:
    """Eigendecomposition and equilibrium offset of one region matrix."""

    def __init__(self, params: ModelParams, region: int, perturbed: bool = False):
        self.region = region
        self.perturbed = perturbed
        self.d = d_vector(params, region)
        Wr = np.diag(params.A) + params.W * self.d[None, :]
        self.Wr = Wr
        if np.linalg.cond(Wr) > COND_LIMIT:
            raise SingularRegionMatrix(f"region {region} matrix is singular", region=region)
        self.Wr_lu = sla.lu_factor(Wr, check_finite=False)
        # p = Wr^{-1} h ; htilde = -p
        self.p = sla.lu_solve(self.Wr_lu, params.h, check_finite=False)
        lam, U = np.linalg.eig(Wr)
        rho = max(np.max(np.abs(lam)), np.finfo(float).tiny)
        diffs = np.abs(lam[:, None] - lam[None, :]) + np.diag(np.full(lam.shape[0], np.inf))
        self.gap = float(np.min(diffs)) if lam.shape[0] > 1 else np.inf
        if self.gap < GAP_RTOL * rho:
            raise NearDefective(f"region {region} eigenvalue gap {self.gap:.3g}", region=region)
        lam, U, partner = _pair_conjugates(lam, U)
        self.lam = lam
        self.U = U
        self.partner = partner
        self.U_lu = sla.lu_factor(U, check_finite=False)
        self.real_idx = np.flatnonzero(lam.imag == 0.0)
        self.pos_idx = np.flatnonzero(lam.imag > 0.0)

    def coefficients(self, z0) -> tuple[np.ndarray, np.ndarray]:
        """Return (c, ctilde) for an entry state; c solves U c = z0 + p."""
        v = np.asarray(z0, dtype=float) + self.p
        c = sla.lu_solve(self.U_lu, v.astype(complex), check_finite=False)
        # enforce conjugate symmetry
        c = 0.5 * (c + np.conj(c[self.partner]))
        c[self.real_idx] = c[self.real_idx].real
        return c, self.U * c[None, :]


def decomposition(params: ModelParams, region: int, allow_perturb: bool = False) -> RegionDecomposition:
    """Cached :class:`RegionDecomposition` for ``region``."""
    dec = params.cache.get(region)
    if dec is not None:
        return dec
    try:
        dec = RegionDecomposition(params, region)
    except NearDefective:
        if not allow_perturb:
            raise
        pert = perturb_for_diagonalizability(params, region)
        dec = RegionDecomposition(pert, region, perturbed=True)
    params.cache[region] = dec
    return dec


@dataclass
class SolutionTerms:
    """Real-form layout of a solution for the interval kernels."""

    lam_r: np.ndarray      # real eigenvalues
    lam_c_re: np.ndarray   # complex pairs (positive imaginary member)
    lam_c_im: np.ndarray
    coef_r: np.ndarray     # (M, nr)
    coef_c: np.ndarray     # (M, nc) complex
    htilde: np.ndarray     # (M,)

    def coefficient_intervals(self, rows=None):
        sl = slice(None) if rows is None else rows
        cr = self.coef_r[sl]
        cc = self.coef_c[sl]
        cr2 = np.stack([cr, cr], axis=-1)
        ca = np.stack([cc.real, cc.real], axis=-1)
        cb = np.stack([cc.imag, cc.imag], axis=-1)
        hh = np.stack([self.htilde[sl], self.htilde[sl]], axis=-1)
        return (np.ascontiguousarray(cr2), np.ascontiguousarray(ca),
                np.ascontiguousarray(cb), np.ascontiguousarray(hh))


@dataclass
class RegionSolution:
    region: int
    lambdas: np.ndarray
    U: np.ndarray
    c: np.ndarray
    c_tilde: np.ndarray
    h_tilde: np.ndarray
    z0: np.ndarray
    t_origin: float = 0.0
    dec: RegionDecomposition | None = field(default=None, repr=False)

    @cached_property
    def terms(self) -> SolutionTerms:
        if self.dec is not None:
            ridx, pidx = self.dec.real_idx, self.dec.pos_idx
        else:
            ridx = np.flatnonzero(self.lambdas.imag == 0.0)
            pidx = np.flatnonzero(self.lambdas.imag > 0.0)
        return SolutionTerms(
            lam_r=np.ascontiguousarray(self.lambdas[ridx].real),
            lam_c_re=np.ascontiguousarray(self.lambdas[pidx].real),
            lam_c_im=np.ascontiguousarray(self.lambdas[pidx].imag),
            coef_r=np.ascontiguousarray(self.c_tilde[:, ridx].real),
            coef_c=np.ascontiguousarray(self.c_tilde[:, pidx]),
            htilde=self.h_tilde,
        )


def region_solution(params: ModelParams, z0, t_origin: float = 0.0,
                    region: int | None = None, allow_perturb: bool = False) -> RegionSolution:
    """Analytic solution of the region containing ``z0`` (or ``region``)."""
    z0 = np.asarray(z0, dtype=float)
    if region is None:
        region = region_of(params, z0)
    dec = decomposition(params, region, allow_perturb=allow_perturb)
    c, ct = dec.coefficients(z0)
    return RegionSolution(region=region, lambdas=dec.lam, U=dec.U, c=c, c_tilde=ct,
                          h_tilde=-dec.p, z0=z0, t_origin=float(t_origin), dec=dec)


def eval_point(sol: RegionSolution, t):
    """State(s) at segment-relative time(s) ``t``; shape (M,) or (len(t), M)."""
    scalar = np.ndim(t) == 0
    tt = np.atleast_1d(np.asarray(t, dtype=float))
    E = np.exp(np.outer(tt, sol.lambdas))
    Z = E @ sol.c_tilde.T
    re = Z.real + sol.h_tilde[None, :]
    if np.any(np.abs(Z.imag) > RESIDUE_RTOL * (1.0 + np.abs(re))):
        raise ImaginaryResidue("solution has a non-negligible imaginary part")
    return re[0] if scalar else re


def eval_time_derivative(sol: RegionSolution, dim: int, t) -> float:
    """d z^(dim)/dt; the constant offset does not contribute."""
    val = np.sum(sol.lambdas * sol.c_tilde[dim] * np.exp(sol.lambdas * float(t)))
    return float(val.real)


def eval_velocity(sol: RegionSolution, t) -> np.ndarray:
    """Full time derivative vector at segment-relative time ``t``."""
    e = sol.lambdas * np.exp(sol.lambdas * float(t))
    return (sol.c_tilde @ e).real


def max_abscissa(params: ModelParams, max_regions: int = 4096, rng=None) -> float:
    """Largest eigenvalue real part over all (or a random sample of) regions."""
    n = 1 << params.P
    if n <= max_regions:
        regions = range(n)
    else:
        rng = np.random.default_rng(0) if rng is None else rng
        regions = rng.integers(0, n, size=max_regions)
    return max(float(np.linalg.eigvals(region_matrix(params, int(r))).real.max()) for r in regions)


def init_params(M: int, P: int, N: int, rng, w_scale: float = 1.0, contracting: bool = True,
                shrink: float = 0.8) -> ModelParams:
    """Random initialization: A ~ U(-0.1, 0), W ~ N(0, w_scale^2 / M), h = 0.

    With ``contracting`` the draw of W is shrunk geometrically until every
    region matrix has negative spectral abscissa.
    """
    A = rng.uniform(-0.1, 0.0, size=M)
    W = rng.normal(0.0, w_scale / np.sqrt(M), size=(M, M))
    params = ModelParams(A=A, W=W, h=np.zeros(M), P=P, N=N)
    while contracting and max_abscissa(params) >= 0.0:
        W = W * shrink
        params = ModelParams(A=A, W=W, h=np.zeros(M), P=P, N=N)
    return params
