"""Spectral heat semigroup ``H_t = exp(t Delta)`` on a finite space.

The generalized eigenproblem ``K phi = lam M phi`` (``M = diag(mu)``) gives
eigenfields orthonormal in the mu-weighted inner product. Tensor-product
grids and tori are decomposed from their 1-D factors, so only the factored
form is stored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .carleson import cube_terms, mean_term
from .cubes import CubeSystem
from .laplace import gradient_field, laplacian
from .mmspace import MetricMeasureSpace
from .multiscale import star_level

__all__ = [
    "SpectralDecomposition",
    "decompose",
    "heat_apply",
    "semigroup_checks",
    "telescope_check",
    "telescope_mode_ratio",
    "gradient_bound_report",
    "energy_limit",
    "DENSE_CAP",
]

DENSE_CAP = 3000


@dataclass
class SpectralDecomposition:
    """Eigenpairs in ascending order.

    ``mode`` is ``"dense"``, ``"separable"`` or ``"partial"``. Separable
    decompositions keep 1-D factors ``(lam_y, Phi_y, m_y)`` and
    ``(lam_x, Phi_x, m_x)``; a partial one keeps only the lowest modes and
    reports the neglected mass through :meth:`truncation_bound`.
    """

    space: MetricMeasureSpace
    eigenvalues: np.ndarray
    mode: str
    vectors: np.ndarray | None = None
    factors: tuple | None = None
    order: np.ndarray | None = None
    complete: bool = True

    @property
    def size(self) -> int:
        return self.eigenvalues.size

    def transform(self, f) -> np.ndarray:
        """Coefficients ``<f, phi_i>_mu`` (columns of ``f`` for 2-D input)."""
        f = np.asarray(f, dtype=float)
        if self.mode != "separable":
            return self.vectors.T @ (self.space.measure[:, None] * f if f.ndim == 2
                                     else self.space.measure * f)
        (ly, Py, my), (lx, Px, mx) = self.factors
        ny, nx = my.size, mx.size

        def one(v):
            G = v.reshape(ny, nx)
            return (Py.T @ (my[:, None] * G * mx[None, :]) @ Px).ravel()[self.order]

        return one(f) if f.ndim == 1 else np.stack([one(f[:, j]) for j in range(f.shape[1])], 1)

    def inverse(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        if self.mode != "separable":
            return self.vectors @ c
        (ly, Py, my), (lx, Px, mx) = self.factors
        flat = np.empty_like(c)
        flat[self.order] = c
        return (Py @ flat.reshape(my.size, mx.size) @ Px.T).ravel()

    def truncation_bound(self, f, t: float) -> float:
        """Bound on ``||H_t f - H_t P f||`` for the neglected modes."""
        if self.complete:
            return 0.0
        f = np.asarray(f, dtype=float)
        rest = f - self.inverse(self.transform(f))
        nrm = math.sqrt(max(math.fsum(self.space.measure * rest ** 2), 0.0))
        return math.exp(-self.eigenvalues[-1] * t) * nrm


def _path_factor(n, h, periodic):
    """1-D stiffness and lumped mass for a uniform path or cycle."""
    if periodic:
        K = np.zeros((n, n))
        for i in range(n):
            j = (i + 1) % n
            K[i, i] += 1 / h; K[j, j] += 1 / h
            K[i, j] -= 1 / h; K[j, i] -= 1 / h
        return K, np.full(n, h)
    main = np.full(n, 2 / h); main[0] = main[-1] = 1 / h
    K = np.diag(main) - np.diag(np.full(n - 1, 1 / h), 1) - np.diag(np.full(n - 1, 1 / h), -1)
    m = np.full(n, h); m[0] = m[-1] = h / 2
    return K, m


def _separable_factors(space):
    if space.kind == "grid2d":
        ny, nx = space.grid_shape
        hy, hx = space.spacing
        periodic = False
    elif space.kind == "torus2d":
        p = space.params
        nx, ny = int(p["nx"]), int(p["ny"])
        hx, hy = float(p.get("width", 1.0)) / nx, float(p.get("height", 1.0)) / ny
        periodic = True
    else:
        return None
    if min(nx, ny) < (3 if periodic else 2):
        return None
    Kx, mx = _path_factor(nx, hx, periodic)
    Ky, my = _path_factor(ny, hy, periodic)
    K2 = sp.kron(sp.diags(my), sp.csr_matrix(Kx)) + sp.kron(sp.csr_matrix(Ky), sp.diags(mx))
    M2 = np.kron(my, mx)
    scale = abs(space.stiffness).max()
    if (abs(K2 - space.stiffness).max() > 1e-12 * scale
            or np.abs(M2 - space.measure).max() > 1e-12 * space.measure.max()):
        return None
    ly, Py = sla.eigh(Ky, np.diag(my))
    lx, Px = sla.eigh(Kx, np.diag(mx))
    return (np.maximum(ly, 0), Py, my), (np.maximum(lx, 0), Px, mx)


def decompose(space: MetricMeasureSpace, dense_cap: int = DENSE_CAP,
              modes: int | None = None) -> SpectralDecomposition:
    """Eigendecomposition of ``-Delta`` (separable, dense, or partial).

    Spaces above ``dense_cap`` without a tensor structure need ``modes``
    and get the lowest ``modes`` pairs from shift-invert Lanczos.
    """
    fac = _separable_factors(space)
    if fac is not None:
        (ly, _, _), (lx, _, _) = fac
        lam = (ly[:, None] + lx[None, :]).ravel()
        order = np.argsort(lam, kind="stable")
        lam = lam[order]
        lam[0] = 0.0
        return SpectralDecomposition(space, lam, "separable", factors=fac, order=order)
    K = space.stiffness
    mu = space.measure
    if space.n <= dense_cap:
        lam, V = sla.eigh(K.toarray(), np.diag(mu))
        lam = np.maximum(lam, 0.0)
        lam[0] = 0.0
        return SpectralDecomposition(space, lam, "dense", vectors=V)
    if modes is None:
        raise ValueError(f"n = {space.n} exceeds the dense cap; pass modes for a partial solve")
    shift = -1e-3 * K.diagonal().min() / mu.max()
    lam, V = spla.eigsh(K.tocsc(), k=modes, M=sp.diags(mu).tocsc(), sigma=shift, which="LM")
    idx = np.argsort(lam)
    lam, V = np.maximum(lam[idx], 0.0), V[:, idx]
    lam[0] = 0.0
    V = V / np.sqrt(np.einsum("ij,i,ij->j", V, mu, V))[None, :]
    return SpectralDecomposition(space, lam, "partial", vectors=V, complete=False)


def heat_apply(decomp: SpectralDecomposition, f, t: float) -> np.ndarray:
    if t < 0:
        raise ValueError("t must be non-negative")
    f = np.asarray(f, dtype=float)
    if t == 0:
        return f.copy()
    c = decomp.transform(f)
    # neglected modes of a partial decomposition are dropped (see truncation_bound)
    return decomp.inverse(np.exp(-decomp.eigenvalues * t) * c)


def _norm(space, f):
    return math.sqrt(max(math.fsum(space.measure * f ** 2), 0.0))


def _spec_energy(lam, c, t=0.0):
    return math.fsum(lam * np.exp(-2 * lam * t) * c ** 2)


def semigroup_checks(decomp: SpectralDecomposition, f, time_grid) -> dict:
    """Residuals for composition, continuity, contraction, the heat equation
    and commutation with ``(-Delta)^{1/2}``; also the representation
    ``energy = sum lam_i c_i^2``.

    The heat-equation residual is relative to ``||Delta H_t f||`` and skips
    times where that norm has decayed below ``1e-6 ||Delta f||``.
    """
    space = decomp.space
    f = np.asarray(f, dtype=float)
    ts = np.sort(np.asarray(time_grid, dtype=float))
    if np.any(ts <= 0):
        raise ValueError("time grid must be positive")
    nf = _norm(space, f)
    scale = nf if nf > 0 else 1.0
    lam = decomp.eigenvalues
    c = decomp.transform(f)
    h1 = 0.0
    h2 = []
    h3 = 0.0
    cgrad = 0.0
    h4 = 0.0
    h5 = 0.0
    skipped = 0
    root = np.sqrt(lam)
    lap0 = _norm(space, laplacian(space, f))
    root_scale = max(_norm(space, decomp.inverse(root * c)), 1e-300)
    for i, t in enumerate(ts):
        Ht = heat_apply(decomp, f, t)
        s = ts[i - 1] if i else t
        h1 = max(h1, _norm(space, heat_apply(decomp, f, s + t)
                           - heat_apply(decomp, Ht, s)) / scale)
        h2.append(_norm(space, Ht - f) / scale)
        h3 = max(h3, _norm(space, Ht) / scale)
        _, en = gradient_field(space, Ht)
        cgrad = max(cgrad, math.sqrt(t * max(en, 0.0)) / scale)
        lap = laplacian(space, Ht)
        nl = _norm(space, lap)
        if nl >= 1e-6 * lap0:
            dt = 1e-4 * t
            dH = (heat_apply(decomp, f, t + dt) - heat_apply(decomp, f, t - dt)) / (2 * dt)
            h4 = max(h4, _norm(space, dH - lap) / nl)
        else:
            skipped += 1
        a = decomp.inverse(root * (np.exp(-lam * t) * c))
        b = heat_apply(decomp, decomp.inverse(root * c), t)
        h5 = max(h5, _norm(space, a - b) / root_scale)
    _, en0 = gradient_field(space, f)
    spec = _spec_energy(lam, c)
    rep = abs(en0 - spec) / en0 if en0 > 0 else abs(spec)
    return {"H1": h1, "H2": h2, "H2_monotone": bool(np.all(np.diff(h2) >= -1e-14)),
            "H3_contraction": h3, "c_rec": cgrad, "H4": h4, "H4_skipped": skipped,
            "H5": h5, "repA": rep,
            "H2_limit": h2[0], "times": ts.tolist()}


def default_time_grid(decomp: SpectralDecomposition, factor: float = 2 ** 0.25) -> np.ndarray:
    lam = decomp.eigenvalues
    lo = 0.01 / lam[-1]
    hi = 100.0 / lam[1]
    n = int(math.ceil(math.log(hi / lo) / math.log(factor)))
    return lo * factor ** np.arange(n + 1)


def _lhs_mode(a):
    # int_0^a lam t e^{-2 lam t} dt / t in the variable a = lam t
    return -np.expm1(-2 * a) / 2


def _rhs_mode(a):
    # lam t e^{-2 lam t} (e^{-3 lam t} - e^{-lam t})^2 integrated in dt / t
    return -np.expm1(-8 * a) / 8 + np.expm1(-6 * a) / 3 - np.expm1(-4 * a) / 4


def telescope_mode_ratio() -> float:
    """Closed-form ratio for a single eigenmode (independent of ``lam``)."""
    return (1 / 2) / (1 / 8 - 1 / 3 + 1 / 4)


@dataclass
class TelescopeResult:
    lhs: float
    rhs: float
    ratio: float
    lhs_half_step: float
    rhs_half_step: float
    quadrature_change: float
    degenerate: bool = False


def _telescope_integrals(lam, c2, ts):
    u = np.log(ts)
    lt = lam[None, :] * ts[:, None]
    base = lt * np.exp(-2 * lt)
    I1 = base @ c2
    I2 = (base * (np.exp(-3 * lt) - np.exp(-lt)) ** 2) @ c2
    lhs = np.trapezoid(I1, u) if hasattr(np, "trapezoid") else np.trapz(I1, u)
    rhs = np.trapezoid(I2, u) if hasattr(np, "trapezoid") else np.trapz(I2, u)
    a0, a1 = lam * ts[0], lam * ts[-1]
    lhs += math.fsum(c2 * (_lhs_mode(a0) + (0.5 - _lhs_mode(a1))))
    rhs += math.fsum(c2 * (_rhs_mode(a0) + (_rhs_mode(np.full_like(a1, np.inf)) - _rhs_mode(a1))))
    return float(lhs), float(rhs)


def telescope_check(decomp: SpectralDecomposition, f, time_grid=None) -> TelescopeResult:
    """``int ||sqrt t grad H_t g||^2 dt/t`` against the same for ``H_t (H_{3t} - H_t) g``.

    ``g`` is ``f`` minus its mean. Integrals use the trapezoid rule in
    ``log t`` with closed-form tails outside the grid; the same integrals on
    a grid with half the log-step are reported for a quadrature check.
    """
    f = np.asarray(f, dtype=float)
    space = decomp.space
    mean = math.fsum(space.measure * f) / math.fsum(space.measure)
    c = decomp.transform(f - mean)
    lam = decomp.eigenvalues[1:]
    c2 = c[1:] ** 2
    if time_grid is None:
        ts = default_time_grid(decomp)
    else:
        ts = np.sort(np.asarray(time_grid, dtype=float))
    fine = np.sort(np.concatenate([ts, np.sqrt(ts[:-1] * ts[1:])]))
    lhs, rhs = _telescope_integrals(lam, c2, ts)
    lhs2, rhs2 = _telescope_integrals(lam, c2, fine)
    if lhs2 <= 0 and rhs2 <= 0:
        return TelescopeResult(0.0, 0.0, math.nan, 0.0, 0.0, 0.0, True)
    change = max(abs(lhs - lhs2) / lhs2, abs(rhs - rhs2) / rhs2)
    return TelescopeResult(lhs2, rhs2, lhs2 / rhs2, lhs, rhs, change)


def energy_limit(decomp: SpectralDecomposition, f, s_grid) -> np.ndarray:
    """``energy(H_s f)`` along ``s_grid`` (spectral formula)."""
    f = np.asarray(f, dtype=float)
    # energy ignores constants; the shift makes it exactly zero on them
    c = decomp.transform(f - f[0])
    lam = decomp.eigenvalues
    return np.array([_spec_energy(lam, c, s) for s in s_grid])


@dataclass
class GradientBoundReport:
    s_grid: list
    lhs: list
    mean_term: float
    carleson_term: float
    ratio: list
    max_ratio: float
    spread: float               # max ratio / min ratio over the s-grid
    k_star: int
    lam: float
    per_level: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"sGrid": self.s_grid, "lhs": self.lhs, "meanTerm": self.mean_term,
                "carlesonTerm": self.carleson_term, "ratio": self.ratio,
                "maxRatio": self.max_ratio, "spread": self.spread, "kStar": self.k_star,
                "lambda": self.lam, "perLevel": {str(k): v for k, v in self.per_level.items()}}


def gradient_bound_report(space: MetricMeasureSpace, system: CubeSystem, f, s_grid,
                          lam: float = 6.0, decomp: SpectralDecomposition | None = None,
                          terms: dict | None = None, threads: int = 1) -> GradientBoundReport:
    """``||grad H_s f||^2`` against ``meanTerm + sum_{k >= k*} sum_Q H(lam B_Q)^2 mu(Q)``.

    ``terms`` may carry :func:`cube_terms` output for the same ``f`` and
    ``lam`` (a single column).
    """
    f = np.asarray(f, dtype=float)
    s_grid = [float(s) for s in s_grid]
    if any(s <= 0 for s in s_grid):
        raise ValueError("s must be positive")
    ks = star_level(system)
    if ks > system.k_max:
        raise ValueError("system too shallow for k*")
    decomp = decompose(space) if decomp is None else decomp
    cubes = [int(q) for k in range(ks, system.k_max + 1) for q in system.cubes_at(k)]
    todo = [q for q in cubes if terms is None or q not in terms]
    if todo:
        terms = dict(terms or {}) | cube_terms(system, f, lam, cubes=todo, threads=threads)
    per = {k: math.fsum(float(np.ravel(terms[int(q)])[0]) for q in system.cubes_at(k))
           for k in range(ks, system.k_max + 1)}
    carl = math.fsum(per.values())
    mt = mean_term(space, f)
    lhs = list(energy_limit(decomp, f, s_grid))
    den = mt + carl
    ratio = [(v / den if den > 0 else (0.0 if v <= 1e-300 else math.inf)) for v in lhs]
    mx, mn = max(ratio), min(ratio)
    spread = mx / mn if mn > 0 else (1.0 if mx == 0 else math.inf)
    return GradientBoundReport(s_grid, [float(v) for v in lhs], mt, carl, ratio, mx, spread,
                               ks, lam, per)
