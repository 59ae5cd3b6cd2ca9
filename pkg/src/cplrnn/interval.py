"""Outward-rounded real interval arithmetic.

The scalar kernels (``iv_*``) work on ``(lo, hi)`` float pairs and are
numba-compiled so the root finder can call them without Python overhead.
:class:`Interval` wraps them for ordinary use.

Outward rounding nudges every computed endpoint by one representable step
(two for libm transcendental functions, which are not correctly rounded).
The empty set is the pair ``(+inf, -inf)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DivisionByZeroInterval, TooWide

INF = math.inf
TWO_PI = 2.0 * math.pi
# Above this magnitude the critical-point enumeration is not trusted.
TRIG_ARG_LIMIT = 1e8
# Default widest time interval accepted by eval_solution_interval.
MAX_WIDTH = 50.0


# --------------------------------------------------------------------------
# scalar kernels
# --------------------------------------------------------------------------

@njit(cache=True)
def _dn(x):
    return np.nextafter(x, -INF)


@njit(cache=True)
def _up(x):
    return np.nextafter(x, INF)


@njit(cache=True)
def _dn2(x):
    return np.nextafter(np.nextafter(x, -INF), -INF)


@njit(cache=True)
def _up2(x):
    return np.nextafter(np.nextafter(x, INF), INF)


@njit(cache=True)
def iv_is_empty(lo, hi):
    return not (lo <= hi)


@njit(cache=True)
def _mulz(a, b):
    # 0 * inf = 0 for bound computations
    if a == 0.0 or b == 0.0:
        return 0.0
    return a * b


@njit(cache=True)
def iv_add(alo, ahi, blo, bhi):
    if not (alo <= ahi) or not (blo <= bhi):
        return INF, -INF
    return _dn(alo + blo), _up(ahi + bhi)


@njit(cache=True)
def iv_sub(alo, ahi, blo, bhi):
    if not (alo <= ahi) or not (blo <= bhi):
        return INF, -INF
    return _dn(alo - bhi), _up(ahi - blo)


@njit(cache=True)
def iv_mul(alo, ahi, blo, bhi):
    if not (alo <= ahi) or not (blo <= bhi):
        return INF, -INF
    p1 = _mulz(alo, blo)
    p2 = _mulz(alo, bhi)
    p3 = _mulz(ahi, blo)
    p4 = _mulz(ahi, bhi)
    lo = min(min(p1, p2), min(p3, p4))
    hi = max(max(p1, p2), max(p3, p4))
    return _dn(lo), _up(hi)


@njit(cache=True)
def iv_scale(mu, lo, hi):
    if not (lo <= hi):
        return INF, -INF
    if mu >= 0.0:
        return _dn(_mulz(mu, lo)), _up(_mulz(mu, hi))
    return _dn(_mulz(mu, hi)), _up(_mulz(mu, lo))


@njit(cache=True)
def iv_recip(lo, hi):
    """Reciprocal of an interval not containing zero in its interior.

    Returns ``(n, lo1, hi1, lo2, hi2)``; ``n`` is the number of pieces
    (0 signals the degenerate ``[0, 0]`` divisor).
    """
    if lo == 0.0 and hi == 0.0:
        return 0, INF, -INF, INF, -INF
    if lo > 0.0 or hi < 0.0:
        return 1, _dn(1.0 / hi), _up(1.0 / lo), INF, -INF
    if lo == 0.0:
        return 1, _dn(1.0 / hi), INF, INF, -INF
    if hi == 0.0:
        return 1, -INF, _up(1.0 / lo), INF, -INF
    return 2, -INF, _up(1.0 / lo), _dn(1.0 / hi), INF


@njit(cache=True)
def iv_div(alo, ahi, blo, bhi):
    """Extended division ``A / B``; same return layout as :func:`iv_recip`."""
    if not (alo <= ahi) or not (blo <= bhi):
        return 1, INF, -INF, INF, -INF
    if blo == 0.0 and bhi == 0.0:
        return 0, INF, -INF, INF, -INF
    if blo > 0.0 or bhi < 0.0:
        _, rlo, rhi, _, _ = iv_recip(blo, bhi)
        lo, hi = iv_mul(alo, ahi, rlo, rhi)
        return 1, lo, hi, INF, -INF
    # divisor touches or straddles zero
    if alo <= 0.0 <= ahi:
        return 1, -INF, INF, INF, -INF
    if blo < 0.0 < bhi:
        if alo > 0.0:
            return 2, -INF, _up(alo / blo), _dn(alo / bhi), INF
        return 2, -INF, _up(ahi / bhi), _dn(ahi / blo), INF
    if blo == 0.0:
        if alo > 0.0:
            return 1, _dn(alo / bhi), INF, INF, -INF
        return 1, -INF, _up(ahi / bhi), INF, -INF
    # bhi == 0
    if alo > 0.0:
        return 1, -INF, _up(alo / blo), INF, -INF
    return 1, _dn(ahi / blo), INF, INF, -INF


@njit(cache=True)
def iv_intersect(alo, ahi, blo, bhi):
    lo = max(alo, blo)
    hi = min(ahi, bhi)
    if not (lo <= hi):
        return INF, -INF
    return lo, hi


@njit(cache=True)
def iv_exp(lo, hi):
    if not (lo <= hi):
        return INF, -INF
    elo = max(0.0, _dn2(math.exp(lo))) if lo > -INF else 0.0
    ehi = _up2(math.exp(hi)) if hi < INF else INF
    return elo, ehi


@njit(cache=True)
def _trig_range(lo, hi, is_cos):
    # critical points: sin at pi/2 + k*pi (value (-1)^k),
    # cos at k*pi (value (-1)^k)
    if not (lo <= hi):
        return INF, -INF
    if not (abs(lo) < TRIG_ARG_LIMIT and abs(hi) < TRIG_ARG_LIMIT):
        return -1.0, 1.0
    if hi - lo >= TWO_PI:
        return -1.0, 1.0
    shift = 0.0 if is_cos else 0.5 * math.pi
    slack = 1e-12 * max(1.0, max(abs(lo), abs(hi)))
    k_lo = math.ceil((lo - shift) / math.pi - slack)
    k_hi = math.floor((hi - shift) / math.pi + slack)
    if is_cos:
        va = math.cos(lo)
        vb = math.cos(hi)
    else:
        va = math.sin(lo)
        vb = math.sin(hi)
    rlo = max(-1.0, _dn2(min(va, vb)))
    rhi = min(1.0, _up2(max(va, vb)))
    n_crit = k_hi - k_lo + 1
    if n_crit >= 2:
        return -1.0, 1.0
    if n_crit == 1:
        if int(k_lo) % 2 == 0:
            rhi = 1.0
        else:
            rlo = -1.0
    return rlo, rhi


@njit(cache=True)
def iv_sin(lo, hi):
    return _trig_range(lo, hi, False)


@njit(cache=True)
def iv_cos(lo, hi):
    return _trig_range(lo, hi, True)


# --------------------------------------------------------------------------
# sums of exponentials over a time interval
# --------------------------------------------------------------------------

@njit(cache=True)
def term_enclosures(tlo, thi, lam_r, lam_c_re, lam_c_im, er, ec, cc, sc):
    """Per-eigenvalue enclosures of exp/cos/sin over ``[tlo, thi]``.

    Fills ``er[k]`` (exp of real eigenvalue k times T) and, for each complex
    pair k, ``ec[k]`` (exp of real part), ``cc[k]``, ``sc[k]`` (cos, sin of
    the imaginary part times T). Output arrays have shape (n, 2).
    """
    for k in range(lam_r.shape[0]):
        slo, shi = iv_scale(lam_r[k], tlo, thi)
        er[k, 0], er[k, 1] = iv_exp(slo, shi)
    for k in range(lam_c_re.shape[0]):
        slo, shi = iv_scale(lam_c_re[k], tlo, thi)
        ec[k, 0], ec[k, 1] = iv_exp(slo, shi)
        slo, shi = iv_scale(lam_c_im[k], tlo, thi)
        cc[k, 0], cc[k, 1] = iv_cos(slo, shi)
        sc[k, 0], sc[k, 1] = iv_sin(slo, shi)


@njit(cache=True)
def combine_dim(i, cr, ca, cb, hh, er, ec, cc, sc):
    """Enclosure of one coordinate given term enclosures.

    ``cr[i, k]`` are (lo, hi) coefficients of real terms, ``ca``/``cb`` the
    real and imaginary parts of complex coefficients; every pair enters as
    ``2 e^{re t}(a cos(im t) - b sin(im t))``.
    """
    lo = hh[i, 0]
    hi = hh[i, 1]
    for k in range(er.shape[0]):
        tlo, thi = iv_mul(cr[i, k, 0], cr[i, k, 1], er[k, 0], er[k, 1])
        lo, hi = iv_add(lo, hi, tlo, thi)
    for k in range(ec.shape[0]):
        alo, ahi = iv_mul(ca[i, k, 0], ca[i, k, 1], cc[k, 0], cc[k, 1])
        blo, bhi = iv_mul(cb[i, k, 0], cb[i, k, 1], sc[k, 0], sc[k, 1])
        ilo, ihi = iv_sub(alo, ahi, blo, bhi)
        tlo, thi = iv_mul(ec[k, 0], ec[k, 1], ilo, ihi)
        lo, hi = iv_add(lo, hi, 2.0 * tlo, 2.0 * thi)
    if lo != lo or hi != hi:
        return -INF, INF
    return lo, hi


@njit(cache=True)
def derivative_coefficients(lam_r, lam_c_re, lam_c_im, cr, ca, cb):
    """Interval coefficients of the time derivative (multiply by lambda)."""
    ndim = cr.shape[0]
    dr = np.empty_like(cr)
    da = np.empty_like(ca)
    db = np.empty_like(cb)
    for i in range(ndim):
        for k in range(lam_r.shape[0]):
            dr[i, k, 0], dr[i, k, 1] = iv_scale(lam_r[k], cr[i, k, 0], cr[i, k, 1])
        for k in range(lam_c_re.shape[0]):
            # (re + i im)(a + i b) = (re a - im b) + i (re b + im a)
            p1lo, p1hi = iv_scale(lam_c_re[k], ca[i, k, 0], ca[i, k, 1])
            p2lo, p2hi = iv_scale(lam_c_im[k], cb[i, k, 0], cb[i, k, 1])
            da[i, k, 0], da[i, k, 1] = iv_sub(p1lo, p1hi, p2lo, p2hi)
            q1lo, q1hi = iv_scale(lam_c_re[k], cb[i, k, 0], cb[i, k, 1])
            q2lo, q2hi = iv_scale(lam_c_im[k], ca[i, k, 0], ca[i, k, 1])
            db[i, k, 0], db[i, k, 1] = iv_add(q1lo, q1hi, q2lo, q2hi)
    return dr, da, db


@njit(cache=True)
def point_value(i, t, lam_r, lam_c_re, lam_c_im, cr, ca, cb, hh):
    """Float evaluation of coordinate ``i`` at ``t`` (midpoints of coefficients)."""
    acc = 0.5 * (hh[i, 0] + hh[i, 1])
    for k in range(lam_r.shape[0]):
        acc += 0.5 * (cr[i, k, 0] + cr[i, k, 1]) * math.exp(lam_r[k] * t)
    for k in range(lam_c_re.shape[0]):
        a = 0.5 * (ca[i, k, 0] + ca[i, k, 1])
        b = 0.5 * (cb[i, k, 0] + cb[i, k, 1])
        w = lam_c_im[k] * t
        acc += 2.0 * math.exp(lam_c_re[k] * t) * (a * math.cos(w) - b * math.sin(w))
    return acc


# --------------------------------------------------------------------------
# Python-facing types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    @property
    def empty(self) -> bool:
        return not (self.lo <= self.hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo if not self.empty else 0.0

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def __contains__(self, x) -> bool:
        return (not self.empty) and self.lo <= x <= self.hi

    def __add__(self, other):
        return basic_ops("add", self, other)

    def __sub__(self, other):
        return basic_ops("sub", self, other)

    def __mul__(self, other):
        return basic_ops("mul", self, other)

    def __truediv__(self, other):
        return basic_ops("div", self, other)

    def __repr__(self):
        return "Interval.EMPTY" if self.empty else f"[{self.lo!r}, {self.hi!r}]"

    @classmethod
    def point(cls, x: float) -> "Interval":
        return cls(float(x), float(x))


Interval.EMPTY = Interval(INF, -INF)


@dataclass(frozen=True)
class IntervalPair:
    """Possibly disconnected result of an extended division."""

    first: Interval
    second: Interval
    second_present: bool = True

    def __contains__(self, x) -> bool:
        return x in self.first or (self.second_present and x in self.second)


def _as_interval(x) -> Interval:
    if isinstance(x, Interval):
        return x
    return Interval.point(float(x))


def basic_ops(op: str, X, Y):
    """Interval ``X op Y`` for op in {add, sub, mul, scale, div}.

    ``scale`` expects a real scalar ``Y``. Division by an interval with zero
    strictly inside returns an :class:`IntervalPair`.
    """
    X = _as_interval(X)
    if op == "scale":
        return Interval(*iv_scale(float(Y), X.lo, X.hi))
    Y = _as_interval(Y)
    if X.empty or Y.empty:
        return Interval.EMPTY
    if op == "add":
        return Interval(*iv_add(X.lo, X.hi, Y.lo, Y.hi))
    if op == "sub":
        return Interval(*iv_sub(X.lo, X.hi, Y.lo, Y.hi))
    if op == "mul":
        return Interval(*iv_mul(X.lo, X.hi, Y.lo, Y.hi))
    if op == "div":
        n, lo1, hi1, lo2, hi2 = iv_div(X.lo, X.hi, Y.lo, Y.hi)
        if n == 0:
            raise DivisionByZeroInterval("divisor is the degenerate interval [0, 0]")
        if n == 2:
            return IntervalPair(Interval(lo1, hi1), Interval(lo2, hi2))
        return Interval(lo1, hi1)
    raise ValueError(f"unknown interval op {op!r}")


def interval_exp(X: Interval) -> Interval:
    return Interval(*iv_exp(X.lo, X.hi))


def interval_trig(fn: str, X: Interval) -> Interval:
    if X.empty:
        return Interval.EMPTY
    if fn == "sin":
        return Interval(*iv_sin(X.lo, X.hi))
    if fn == "cos":
        return Interval(*iv_cos(X.lo, X.hi))
    raise ValueError(f"unknown trig function {fn!r}")


def eval_solution_interval(sol, dim: int, T: Interval, max_width: float = MAX_WIDTH) -> Interval:
    """Enclosure of coordinate ``dim`` of a region solution over times ``T``.

    ``sol`` is a :class:`cplrnn.model.RegionSolution`; ``T`` is segment-relative.
    """
    if T.empty:
        return Interval.EMPTY
    if T.width > max_width:
        raise TooWide(f"time interval width {T.width} exceeds {max_width}")
    terms = sol.terms
    cr, ca, cb, hh = terms.coefficient_intervals()
    er = np.empty((terms.lam_r.shape[0], 2))
    ec = np.empty((terms.lam_c_re.shape[0], 2))
    cc = np.empty_like(ec)
    sc = np.empty_like(ec)
    term_enclosures(T.lo, T.hi, terms.lam_r, terms.lam_c_re, terms.lam_c_im, er, ec, cc, sc)
    return Interval(*combine_dim(dim, cr, ca, cb, hh, er, ec, cc, sc))
