"""Discrete Dirichlet calculus on a metric measure space.

Region convention: for a vertex set ``U`` the *boundary layer* consists of
members that have a neighbour outside ``U`` or that lie on the boundary of
the underlying domain; the *interior* is the rest. Harmonic extensions fix
the boundary layer and solve ``(K h)(x) = 0`` at interior vertices. Since
every interior neighbour lies in ``U``, a correction supported on the
interior is orthogonal (in the edge bilinear form) to the harmonic part,
which makes the Pythagoras identity exact for energies restricted to ``U``.

A region whose boundary layer is empty (the whole of a closed surface) has
only constant harmonic fields; its trace solution is the mass-weighted mean.
"""

from __future__ import annotations

import hashlib
import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mmspace import Ball, MetricMeasureSpace, average, ball, open_mask

__all__ = [
    "SolverError",
    "HarmonicExtension",
    "Region",
    "split_region",
    "gradient_field",
    "energy",
    "bilinear",
    "laplacian",
    "harmonic_extension",
    "trace_solution",
    "trace_solution_batch",
    "extension_operator",
    "caccioppoli_ratio",
    "poincare_ratio",
    "poincare_constant",
    "sobolev_poincare_ratio",
    "DENSE_CAP",
]

DENSE_CAP = 500
_CACHE_SIZE = 64


class SolverError(RuntimeError):
    """Raised when a Dirichlet solve fails to reach its tolerance."""


@dataclass(frozen=True)
class Region:
    members: np.ndarray     # sorted vertex ids
    interior: np.ndarray
    boundary: np.ndarray
    mask: np.ndarray

    @property
    def key(self) -> bytes:
        return self.interior.tobytes() + b"|" + self.boundary.tobytes()


@dataclass
class HarmonicExtension:
    """Solution of a Dirichlet problem on a region.

    ``values`` is a full-length field: the solution on the region and the
    supplied outside values (the original field for trace solutions)
    elsewhere.
    """

    values: np.ndarray
    region: np.ndarray
    interior: np.ndarray
    boundary: np.ndarray
    residual: float
    rel_residual: float
    solver_iters: int
    method: str

    @property
    def correction(self) -> np.ndarray | None:
        return getattr(self, "_correction", None)


def _as_mask(space: MetricMeasureSpace, region) -> np.ndarray:
    if isinstance(region, Ball):
        region = region.members
    region = np.asarray(region)
    if region.dtype == bool:
        if region.shape != (space.n,):
            raise ValueError("region mask has wrong length")
        return region.copy()
    mask = np.zeros(space.n, dtype=bool)
    mask[region.astype(np.int64)] = True
    return mask


def split_region(space: MetricMeasureSpace, region, boundary=None) -> Region:
    """Split ``region`` into interior and boundary layer.

    ``boundary`` optionally names the boundary vertices explicitly; every
    remaining member must then have all of its neighbours inside the region.
    """
    mask = _as_mask(space, region)
    if not mask.any():
        raise ValueError("empty region")
    outside_nbr = np.asarray(space.weights @ (~mask).astype(float)).ravel() > 0
    if boundary is None:
        bmask = mask & (outside_nbr | space.boundary)
    else:
        bmask = np.zeros(space.n, dtype=bool)
        bmask[np.asarray(list(boundary), dtype=np.int64)] = True
        if np.any(bmask & ~mask):
            raise ValueError("boundary vertices must belong to the region")
        if np.any(mask & ~bmask & outside_nbr):
            raise ValueError("an interior vertex has a neighbour outside the region")
    members = np.flatnonzero(mask)
    return Region(members, np.flatnonzero(mask & ~bmask), np.flatnonzero(bmask), mask)


# ------------------------------------------------------------------ calculus

def _edge_diff(space, f):
    f = np.asarray(f, dtype=float)
    return f[space.edges[:, 1]] - f[space.edges[:, 0]]


def gradient_field(space: MetricMeasureSpace, f) -> tuple[np.ndarray, float]:
    """Pointwise squared gradient and total Dirichlet energy.

    ``ps(x) = (1/mu(x)) * 1/2 * sum_y c(x, y) (f(x) - f(y))**2``
    """
    half = 0.5 * space.conductance * _edge_diff(space, f) ** 2
    acc = np.bincount(space.edges[:, 0], weights=half, minlength=space.n)
    acc += np.bincount(space.edges[:, 1], weights=half, minlength=space.n)
    return acc / space.measure, math.fsum(2.0 * half)


def energy(space: MetricMeasureSpace, f, region=None) -> float:
    """Dirichlet energy, optionally restricted to ``sum_{x in U} mu * ps``."""
    if region is None:
        return math.fsum(space.conductance * _edge_diff(space, f) ** 2)
    ps, _ = gradient_field(space, f)
    idx = np.flatnonzero(_as_mask(space, region))
    return math.fsum(space.measure[idx] * ps[idx])


def bilinear(space: MetricMeasureSpace, f, g, region=None) -> float:
    """Edge bilinear form ``sum_edges c * df * dg`` (restricted like energy)."""
    prod = space.conductance * _edge_diff(space, f) * _edge_diff(space, g)
    if region is None:
        return math.fsum(prod)
    mask = _as_mask(space, region)
    w = 0.5 * (mask[space.edges[:, 0]].astype(float) + mask[space.edges[:, 1]])
    return math.fsum(prod * w)


def laplacian(space: MetricMeasureSpace, f) -> np.ndarray:
    """``(Delta f)(x) = (1/mu(x)) sum_y c(x, y) (f(y) - f(x))``."""
    return -(space.stiffness @ np.asarray(f, dtype=float)) / space.measure


# ------------------------------------------------------------------- solvers

class _Factor:
    def __init__(self, A: sp.csr_matrix, method: str):
        self.method = method
        self.A = A
        if method == "dense":
            self.cf = sla.cho_factor(A.toarray(), lower=True, check_finite=False)
        elif method == "sparse":
            self.lu = spla.splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A")
        elif method != "cg":
            raise ValueError(f"unknown solver method {method!r}")

    def solve(self, b: np.ndarray, tol: float, maxiter: int | None):
        if self.method == "dense":
            return sla.cho_solve(self.cf, b, check_finite=False), 0
        if self.method == "sparse":
            x = self.lu.solve(np.asarray(b, dtype=float))
            return x, 0
        # Jacobi-preconditioned CG, column by column
        d = self.A.diagonal()
        M = sp.diags(1.0 / d)
        B = b.reshape(b.shape[0], -1)
        X = np.empty_like(B)
        iters = 0
        for j in range(B.shape[1]):
            count = [0]

            def cb(_xk, count=count):
                count[0] += 1

            X[:, j], info = spla.cg(self.A, B[:, j], rtol=tol, atol=0.0, M=M,
                                    maxiter=maxiter, callback=cb)
            iters = max(iters, count[0])
            if info > 0:
                raise SolverError(f"CG did not converge in {info} iterations")
        return X.reshape(b.shape), iters


def _factor(space, reg: Region, method: str) -> _Factor:
    """Factorisation of the interior stiffness block, cached per space.

    The cache key is a digest of the block itself, so translated copies of a
    region (same shape on a uniform grid or torus) share one factorisation.
    """
    if method == "auto":
        method = "dense" if reg.interior.size <= DENSE_CAP else "sparse"
    cache = space.__dict__.setdefault("_factor_cache", OrderedDict())
    A = space.stiffness[reg.interior][:, reg.interior].tocsr()
    A.sort_indices()
    h = hashlib.blake2b(digest_size=20)
    for arr in (A.indptr, A.indices, A.data):
        h.update(np.ascontiguousarray(arr).tobytes())
    key = (h.digest(), method)
    if key in cache:
        cache.move_to_end(key)
        return cache[key]
    fac = _Factor(A, method)
    cache[key] = fac
    if len(cache) > _CACHE_SIZE:
        cache.popitem(last=False)
    return fac


def _solve_interior(space, reg: Region, g: np.ndarray, tol: float, method: str,
                    maxiter=None):
    """Interior values with boundary layer fixed from ``g`` (1-D or 2-D)."""
    K_IB = space.stiffness[reg.interior][:, reg.boundary]
    rhs = -(K_IB @ g[reg.boundary])
    fac = _factor(space, reg, method)
    x, iters = fac.solve(rhs, tol, maxiter)
    return x, rhs, fac, iters


def harmonic_extension(space: MetricMeasureSpace, region, boundary_data,
                       tol: float = 1e-10, method: str = "auto",
                       maxiter: int | None = None) -> HarmonicExtension:
    """Harmonic field on ``region`` with prescribed boundary-layer values.

    Parameters
    ----------
    region : index array, bool mask or Ball
    boundary_data : full-length array or ``{vertex: value}`` dict
        A dict also fixes which vertices form the boundary layer.
    tol : float
        Relative residual target (checked for every method).
    method : {"auto", "dense", "sparse", "cg"}
        ``auto`` is a direct solve (dense Cholesky up to ``DENSE_CAP``
        unknowns, sparse LU beyond).
    """
    if isinstance(boundary_data, dict):
        reg = split_region(space, region, boundary=boundary_data.keys())
        g = np.zeros(space.n)
        for v, val in boundary_data.items():
            g[int(v)] = float(val)
    else:
        reg = split_region(space, region)
        g = np.asarray(boundary_data, dtype=float).copy()
        if g.shape != (space.n,):
            raise ValueError("boundary data must be a full-length field")
    values = g.copy()
    if reg.interior.size == 0:
        return HarmonicExtension(values, reg.members, reg.interior, reg.boundary,
                                 0.0, 0.0, 0, "none")
    if reg.boundary.size == 0:
        values[reg.members] = average(space, g, reg.members)
        return HarmonicExtension(values, reg.members, reg.interior, reg.boundary,
                                 0.0, 0.0, 0, "mean")
    x, rhs, fac, iters = _solve_interior(space, reg, g, tol, method, maxiter)
    values[reg.interior] = x
    r = fac.A @ x - rhs
    scale = max(np.linalg.norm(rhs), np.linalg.norm(fac.A @ x), 1e-300)
    rel = float(np.linalg.norm(r) / scale) if np.linalg.norm(rhs) > 0 else float(np.linalg.norm(r))
    if fac.method == "cg" and rel > 10 * tol:
        raise SolverError(f"relative residual {rel:.3e} above tolerance {tol:.1e}")
    res = float(np.max(np.abs(r) / space.measure[reg.interior]))
    return HarmonicExtension(values, reg.members, reg.interior, reg.boundary,
                             res, rel, iters, fac.method)


def trace_solution(space: MetricMeasureSpace, region, f, tol: float = 1e-10,
                   method: str = "auto") -> HarmonicExtension:
    """Harmonic replacement of ``f`` on ``region`` (``f`` kept elsewhere)."""
    f = np.asarray(f, dtype=float)
    h = harmonic_extension(space, region, f, tol=tol, method=method)
    h._correction = h.values - f
    return h


def trace_solution_batch(space: MetricMeasureSpace, region, F, tol: float = 1e-10,
                         method: str = "auto"):
    """Trace solutions for several fields at once.

    ``F`` has shape ``(n, m)``. Returns ``(reg, H)`` with ``H`` of shape
    ``(len(reg.members), m)``: the harmonic replacements on the region.
    """
    reg = region if isinstance(region, Region) else split_region(space, region)
    F = np.asarray(F, dtype=float)
    H = F[reg.members].copy()
    if reg.interior.size == 0:
        return reg, H
    if reg.boundary.size == 0:
        w = space.measure[reg.members]
        H[:] = (w @ F[reg.members]) / w.sum()
        return reg, H
    x, _, _, _ = _solve_interior(space, reg, F, tol, method)
    H[np.searchsorted(reg.members, reg.interior)] = x
    return reg, H


def extension_operator(space: MetricMeasureSpace, region):
    """Dense map from boundary-layer values to values on the region.

    Returns ``(reg, E)`` with ``E`` of shape ``(len(reg.members),
    len(reg.boundary))`` so that ``h[reg.members] = E @ g[reg.boundary]``.
    """
    reg = region if isinstance(region, Region) else split_region(space, region)
    pos = np.searchsorted(reg.members, reg.boundary)
    E = np.zeros((reg.members.size, reg.boundary.size))
    E[pos, np.arange(reg.boundary.size)] = 1.0
    if reg.interior.size and reg.boundary.size:
        K_IB = space.stiffness[reg.interior][:, reg.boundary]
        fac = _factor(space, reg, "auto")
        X, _ = fac.solve(-K_IB.toarray(), 0.0, None)
        E[np.searchsorted(reg.members, reg.interior)] = X
    return reg, E


# ------------------------------------------------------- estimates and ratios

def _mass_int(space, idx, vals):
    return math.fsum(space.measure[idx] * vals)


def caccioppoli_ratio(space: MetricMeasureSpace, B: Ball, u, lam=None) -> float:
    """``int_B ps(u) / (r**-2 int_{2B} (u - lam)**2)``; ``lam`` defaults to the 2B mean."""
    u = np.asarray(u, dtype=float)
    B2 = ball(space, B.center, 2 * B.radius)
    if lam is None:
        lam = average(space, u, B2.members)
    den = _mass_int(space, B2.members, (u[B2.members] - lam) ** 2) / B.radius ** 2
    ps, _ = gradient_field(space, u)
    num = _mass_int(space, B.members, ps[B.members])
    if den <= 1e-300:
        return 0.0
    return num / den


def poincare_ratio(space: MetricMeasureSpace, B: Ball, u, dilation: float = 2.0) -> float:
    """``(avg_B |u - <u>_B|^2)^{1/2} / (r (avg_{AB} ps)^{1/2})`` with ``A = dilation``."""
    u = np.asarray(u, dtype=float)
    m = B.members
    mean = average(space, u, m)
    lhs = _mass_int(space, m, (u[m] - mean) ** 2) / space.measure[m].sum()
    BA = ball(space, B.center, dilation * B.radius)
    ps, _ = gradient_field(space, u)
    rhs = _mass_int(space, BA.members, ps[BA.members]) / space.measure[BA.members].sum()
    if lhs <= 1e-300:
        return 0.0
    if rhs <= 0:
        return math.inf
    return math.sqrt(lhs) / (B.radius * math.sqrt(rhs))


def sobolev_poincare_ratio(space: MetricMeasureSpace, B: Ball, u) -> float:
    """``(avg_B u^2)^{1/2} / (r (avg_B ps)^{1/2})`` for ``u`` vanishing off the ball interior."""
    u = np.asarray(u, dtype=float)
    m = B.members
    mass = space.measure[m].sum()
    lhs = _mass_int(space, m, u[m] ** 2) / mass
    ps, _ = gradient_field(space, u)
    rhs = _mass_int(space, m, ps[m]) / mass
    if lhs <= 1e-300:
        return 0.0
    return math.sqrt(lhs) / (B.radius * math.sqrt(rhs))


def random_test_field(space: MetricMeasureSpace, rng: np.random.Generator,
                      terms: int = 3) -> np.ndarray:
    """Field family used for Poincare sampling.

    A random signed sum of distance functions ``d(p_i, .)`` plus, on
    embedded spaces, a random linear function of the coordinates.
    """
    u = np.zeros(space.n)
    for p in rng.integers(0, space.n, size=terms):
        u += rng.normal() * space.distances_from(int(p))
    if space.embedding is not None:
        u += space.embedding @ rng.normal(size=space.embedding.shape[1])
    return u


def poincare_constant(space: MetricMeasureSpace, samples: int = 100,
                      seed: int = 0) -> float:
    """Empirical max of :func:`poincare_ratio` with dilation 2.

    Balls have a uniformly random center and a log-uniform radius between
    two minimal edge lengths and half the diameter.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = 2 * space.min_edge_length, max(space.diam / 2, 2 * space.min_edge_length)
    best = 0.0
    for _ in range(samples):
        x = int(rng.integers(space.n))
        r = lo * (hi / lo) ** rng.random()
        u = random_test_field(space, rng)
        best = max(best, poincare_ratio(space, ball(space, x, r), u))
    return best
