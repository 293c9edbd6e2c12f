"""Local approximation coefficients.

All coefficients share one scale-normalised approximation term

    approx(h) = avg_B ((f - h) / r)**2        (mu-weighted average over B)

and differ in the competitor class and penalty:

* ``H``      harmonic competitors, no penalty;
* ``Hosc``   harmonic competitors, penalty ``avg_B (|grad h| - <|grad h|>_B)**2``;
* ``Omega``  affine competitors (embedded spaces), no penalty;
* ``Hrcd``   harmonic competitors, penalty ``r**2 avg_B |Hess h|_HS**2`` (grids).

``H`` comes in an exact variant (least squares over boundary-layer data of
the harmonic extension) and a trace variant (the harmonic replacement of
``f``). ``Hosc`` and ``Hrcd`` minimise over a finite candidate set, so they
are upper bounds for the corresponding infima. Gradients and Hessians of a
candidate are taken on its global field: the candidate on ``B`` and ``f``
elsewhere (affine candidates are evaluated on the whole space).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .laplace import (extension_operator, gradient_field, laplacian,
                      split_region, trace_solution)
from .mmspace import Ball, MetricMeasureSpace, ball

__all__ = [
    "CoefficientRecord",
    "HessianField",
    "VARIANTS",
    "approx_term",
    "coeff_H",
    "coeff_H_osc",
    "coeff_omega",
    "coeff_H_rcd",
    "coefficients",
    "fd_hessian",
    "hessian_caccioppoli_ratio",
    "gradient_osc_vs_hessian_ratio",
    "RIDGE",
]

VARIANTS = ("H-exact", "H-trace", "Hosc", "Omega", "Hrcd")
RIDGE = 1e-12


@dataclass
class CoefficientRecord:
    center: int
    radius: float
    variant: str
    value: float
    terms: dict
    minimizer: object = None
    candidate: str = ""
    flags: list = field(default_factory=list)
    level: int | None = None
    cube: int | None = None


@dataclass
class HessianField:
    matrices: np.ndarray     # (n, m, m)
    hs_norm_sq: np.ndarray   # (n,)


def _fsum_w(w, v):
    return math.fsum(w * v)


def approx_term(space: MetricMeasureSpace, B: Ball, f, h) -> float:
    m = B.members
    w = space.measure[m]
    return _fsum_w(w, ((np.asarray(f)[m] - np.asarray(h)[m]) / B.radius) ** 2) / math.fsum(w)


def _osc_term(space, B, h_full):
    ps, _ = gradient_field(space, h_full)
    g = np.sqrt(ps[B.members])
    w = space.measure[B.members]
    mean = _fsum_w(w, g) / math.fsum(w)
    return _fsum_w(w, (g - mean) ** 2) / math.fsum(w)


def _hess_term(space, B, h_full):
    hs = fd_hessian(space, h_full).hs_norm_sq[B.members]
    w = space.measure[B.members]
    return B.radius ** 2 * _fsum_w(w, hs) / math.fsum(w)


def _is_grid(space):
    return space.grid_shape is not None and space.embedding is not None


# ------------------------------------------------------------------ Hessian

def _second_diff(a, axis, step):
    n = a.shape[axis]
    if n < 3:
        raise ValueError("fd_hessian needs at least 3 points per axis")
    a = np.moveaxis(a, axis, 0)
    out = np.empty_like(a)
    out[1:-1] = (a[2:] - 2 * a[1:-1] + a[:-2]) / step ** 2
    out[0] = out[1]
    out[-1] = out[-2]
    return np.moveaxis(out, 0, axis)


def fd_hessian(space: MetricMeasureSpace, h) -> HessianField:
    """Finite-difference Hessian on a regular grid.

    Pure second derivatives use the centred 3-point stencil, shifted one
    node inwards at the grid boundary. Mixed derivatives compose
    second-order accurate first differences (``np.gradient`` with
    ``edge_order=2``); both are exact on quadratics.
    """
    if not _is_grid(space):
        raise ValueError("fd_hessian requires a regular grid space")
    shape = space.grid_shape
    steps = space.spacing
    a = np.asarray(h, dtype=float).reshape(shape)
    m = len(shape)
    # grid axes are stored slowest-first; embedding coordinate i <-> axis m-1-i
    H = np.zeros((space.n, m, m))
    for i in range(m):
        ax = m - 1 - i
        H[:, i, i] = _second_diff(a, ax, steps[ax]).ravel()
    for i in range(m):
        for j in range(i + 1, m):
            axi, axj = m - 1 - i, m - 1 - j
            d = np.gradient(a, steps[axi], axis=axi, edge_order=2)
            d = np.gradient(d, steps[axj], axis=axj, edge_order=2).ravel()
            H[:, i, j] = d
            H[:, j, i] = d
    return HessianField(H, np.einsum("nij,nij->n", H, H))


# ------------------------------------------------------------- candidates

def _affine_fit(space, B, f):
    """mu-weighted least squares ``f ~ a + b.(y - x_B)`` on the ball."""
    m = B.members
    X = space.embedding[m] - space.embedding[B.center]
    A = np.hstack([np.ones((m.size, 1)), X])
    w = space.measure[m]
    G = A.T @ (w[:, None] * A)
    rhs = A.T @ (w * np.asarray(f)[m])
    flags = []
    try:
        cf = sla.cho_factor(G, check_finite=False)
        if np.linalg.cond(G) > 1e12:
            raise np.linalg.LinAlgError
        coef = sla.cho_solve(cf, rhs, check_finite=False)
    except (np.linalg.LinAlgError, sla.LinAlgError):
        ridge = RIDGE * np.trace(G) / G.shape[0]
        coef = np.linalg.solve(G + ridge * np.eye(G.shape[0]), rhs)
        flags.append("omega-ridge")
    full = coef[0] + (space.embedding - space.embedding[B.center]) @ coef[1:]
    return coef, full, flags


class _Candidates:
    """Harmonic competitors on one ball, computed once and shared."""

    def __init__(self, space, B: Ball, f, want_exact=True, tol=1e-10):
        self.space, self.B = space, B
        self.f = np.asarray(f, dtype=float)
        self.flags = []
        self.fields = {}        # name -> global field
        self.zero_hess = set()  # candidates known to have zero Hessian
        self.harmonic = {}      # name -> bool (competitor for H)
        self.reg = split_region(space, B.members)
        tr = trace_solution(space, B.members, self.f, tol=tol)
        self.fields["trace"] = tr.values
        self.harmonic["trace"] = True
        if want_exact:
            self.fields["exact"] = self._exact()
            self.harmonic["exact"] = True
        if space.embedding is not None and space.metric_kind == "euclidean":
            coef, full, fl = _affine_fit(space, B, self.f)
            self.affine_coef = coef
            self.fields["affine"] = full
            self.zero_hess.add("affine")
            self.flags += fl
            # affine maps compete as harmonic fields only where they are harmonic
            lap = laplacian(space, full)[self.reg.interior]
            scale = max(np.linalg.norm(coef[1:]), 1e-300)
            self.harmonic["affine"] = bool(
                np.all(np.abs(lap) <= 1e-8 * scale / max(space.min_edge_length, 1e-300)))

    def _exact(self):
        space, B, f = self.space, self.B, self.f
        m = B.members
        w = space.measure[m]
        if self.reg.boundary.size == 0:
            E = np.ones((m.size, 1))
        else:
            _, E = extension_operator(space, self.reg)
        sw = np.sqrt(w)
        A = sw[:, None] * E
        b = sw * f[m]
        G = A.T @ A
        ridge = RIDGE * np.trace(G) / G.shape[0]
        Gr = sla.cho_factor(G + ridge * np.eye(G.shape[0]), check_finite=False)
        rhs = A.T @ b
        g = sla.cho_solve(Gr, rhs, check_finite=False)
        # iterated refinement removes the ridge bias when G is nonsingular
        for _ in range(2):
            g = g + sla.cho_solve(Gr, rhs - G @ g, check_finite=False)
        h = f.copy()
        h[m] = E @ g
        # flag when the ridge moves the value noticeably
        g0 = sla.lstsq(A, b, check_finite=False)[0]
        v_r = np.sum((b - A @ g) ** 2)
        v_0 = np.sum((b - A @ g0) ** 2)
        if abs(v_r - v_0) > 1e-8 * max(v_0, 1e-14 * float(b @ b), 1e-300):
            self.flags.append("exact-ridge")
        self.exact_boundary = g
        return h

    def approx(self, name):
        return approx_term(self.space, self.B, self.f, self.fields[name])


def _singleton(B):
    return B.members.size <= 1


def _record(B, variant, value, terms, **kw):
    return CoefficientRecord(int(B.center), float(B.radius), variant, value, terms, **kw)


def coefficients(space: MetricMeasureSpace, B: Ball, f, variants=VARIANTS,
                 tol: float = 1e-10, candidates=None) -> dict:
    """Evaluate several variants on one ball, sharing the candidate solves.

    ``candidates`` restricts the competitor set of ``H-exact``, ``Hosc`` and
    ``Hrcd`` (any of ``"trace"``, ``"exact"``, ``"affine"``; default all).
    """
    variants = tuple(variants)
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}")
    if "Hrcd" in variants and not _is_grid(space):
        raise ValueError("Hrcd requires a regular grid space")
    if "Omega" in variants and (space.embedding is None or space.metric_kind != "euclidean"):
        raise ValueError("Omega requires a Euclidean embedding")
    if _singleton(B):
        return {v: _record(B, v, 0.0, {"approx": 0.0, "osc": 0.0, "hess": 0.0},
                           candidate="singleton") for v in variants}
    need_exact = any(v in variants for v in ("H-exact", "Hosc", "Hrcd"))
    C = _Candidates(space, B, f, want_exact=need_exact, tol=tol)
    out = {}
    approx = {name: C.approx(name) for name in C.fields}
    pool = [n for n in C.fields if candidates is None or n in candidates]
    if not pool:
        raise ValueError("empty candidate set")
    if "H-trace" in variants:
        out["H-trace"] = _record(B, "H-trace", math.sqrt(approx["trace"]),
                                 {"approx": approx["trace"], "osc": 0.0, "hess": 0.0},
                                 minimizer=C.fields["trace"], candidate="trace",
                                 flags=list(C.flags))
    if "H-exact" in variants:
        names = [n for n in pool if C.harmonic.get(n)]
        if not names:
            raise ValueError("no harmonic candidate in the candidate set")
        best = min(names, key=lambda n: (approx[n], n))
        out["H-exact"] = _record(B, "H-exact", math.sqrt(approx[best]),
                                 {"approx": approx[best], "osc": 0.0, "hess": 0.0},
                                 minimizer=C.fields[best], candidate=best,
                                 flags=list(C.flags))
    if "Omega" in variants:
        a = approx["affine"]
        out["Omega"] = _record(B, "Omega", math.sqrt(a), {"approx": a, "osc": 0.0, "hess": 0.0},
                               minimizer=C.affine_coef, candidate="affine",
                               flags=list(C.flags))
    if "Hosc" in variants:
        best = None
        for n in pool:
            if not C.harmonic.get(n):
                continue
            osc = _osc_term(space, B, C.fields[n])
            tot = approx[n] + osc
            if best is None or tot < best[0]:
                best = (tot, n, osc)
        if best is None:
            raise ValueError("no harmonic candidate in the candidate set")
        tot, n, osc = best
        out["Hosc"] = _record(B, "Hosc", math.sqrt(tot),
                              {"approx": approx[n], "osc": osc, "hess": 0.0},
                              minimizer=C.fields[n], candidate=n, flags=list(C.flags))
    if "Hrcd" in variants:
        best = None
        for n in pool:
            hess = 0.0 if n in C.zero_hess else _hess_term(space, B, C.fields[n])
            tot = approx[n] + hess
            if best is None or tot < best[0]:
                best = (tot, n, hess)
        tot, n, hess = best
        out["Hrcd"] = _record(B, "Hrcd", math.sqrt(tot),
                              {"approx": approx[n], "osc": 0.0, "hess": hess},
                              minimizer=C.fields[n], candidate=n, flags=list(C.flags))
    return out


def coeff_H(space, B: Ball, f, variant: str = "trace", tol: float = 1e-10) -> CoefficientRecord:
    name = {"trace": "H-trace", "exact": "H-exact"}.get(variant, variant)
    if name not in ("H-trace", "H-exact"):
        raise ValueError("variant must be 'exact' or 'trace'")
    return coefficients(space, B, f, (name,), tol=tol)[name]


def coeff_H_osc(space, B: Ball, f, candidates=None, tol: float = 1e-10) -> CoefficientRecord:
    return coefficients(space, B, f, ("Hosc",), tol=tol, candidates=candidates)["Hosc"]


def coeff_omega(space, B: Ball, f) -> CoefficientRecord:
    return coefficients(space, B, f, ("Omega",))["Omega"]


def coeff_H_rcd(space, B: Ball, f, candidates=None, tol: float = 1e-10) -> CoefficientRecord:
    return coefficients(space, B, f, ("Hrcd",), tol=tol, candidates=candidates)["Hrcd"]


# ----------------------------------------------------------------- ratios

def hessian_caccioppoli_ratio(space, B: Ball, h) -> float:
    """``int_B |r Hess h|_HS^2 / int_{2B} |grad h|^2``; 0 when h is constant on 2B."""
    h = np.asarray(h, dtype=float)
    hs = fd_hessian(space, h).hs_norm_sq
    lhs = B.radius ** 2 * _fsum_w(space.measure[B.members], hs[B.members])
    B2 = ball(space, B.center, 2 * B.radius)
    ps, _ = gradient_field(space, h)
    rhs = _fsum_w(space.measure[B2.members], ps[B2.members])
    if rhs <= 1e-300:
        return 0.0
    return lhs / rhs


def gradient_osc_vs_hessian_ratio(space, B: Ball, f) -> float:
    """``int_B (|grad f| - <|grad f|>_B)^2 / int_{4B} r^2 |Hess f|_HS^2``."""
    f = np.asarray(f, dtype=float)
    ps, _ = gradient_field(space, f)
    g = np.sqrt(ps[B.members])
    w = space.measure[B.members]
    mean = _fsum_w(w, g) / math.fsum(w)
    lhs = _fsum_w(w, (g - mean) ** 2)
    B4 = ball(space, B.center, 4 * B.radius)
    hs = fd_hessian(space, f).hs_norm_sq
    rhs = B.radius ** 2 * _fsum_w(space.measure[B4.members], hs[B4.members])
    # rounding-level Hessians (affine f) count as zero
    scale = _fsum_w(space.measure[B4.members], ps[B4.members])
    if rhs <= 1e-18 * scale or rhs <= 1e-300:
        return 0.0
    return lhs / rhs
