"""Multiscale harmonic replacement, Hessian fields and partitions of unity.

``f_k`` replaces ``f`` on every level-``k`` descendant ``Q`` of a root cube
by its trace solution on ``Q``. Corrections vanish on each cube's boundary
layer, so consecutive fields satisfy the exact energy splitting

    E_Q(f_{k+1} - f_k) = E_Q(f_{k+1}) - E_Q(f_k)

for every level-``k`` cube ``Q``, with ``E_Q`` the energy restricted to ``Q``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .carleson import ball_coefficients_sq
from .coeffs import coefficients, fd_hessian
from .cubes import (CubeSystem, ShiftedFamily, assign_super_cubes,
                    build_shifted_systems)
from .laplace import gradient_field, trace_solution_batch
from .mmspace import MetricMeasureSpace, ball

__all__ = [
    "ReplacementSequence",
    "PartitionOfUnity",
    "HessianFieldReport",
    "Interpolant",
    "default_depth",
    "star_level",
    "replacement_sequence",
    "pythagoras_check",
    "discrete_cont_residual",
    "telescoping_report",
    "hessian_field_sequence",
    "partition_of_unity",
    "interpolant",
]


def default_depth(system: CubeSystem, root: int | None = None) -> int:
    """Levels below ``root`` until ``5 rho**k`` reaches four edge lengths."""
    space = system.space
    k0 = system.k_min if root is None else int(system.level_of[root])
    k = k0
    while k < system.k_max and system.ell_at(k) > 4 * space.min_edge_length:
        k += 1
    return k - k0


def star_level(system: CubeSystem) -> int:
    """Smallest ``k`` with ``30 rho**k <= diam / 2`` (clipped to the system)."""
    k = math.ceil(math.log(system.space.diam / 60.0) / math.log(system.rho) - 1e-12)
    return max(k, system.k_min)


def _sum_w(w, v):
    return math.fsum(w * v)


def _trace_on(space, members, f, tol=1e-10, method="auto"):
    # shift by one member value so constants are reproduced exactly
    c = float(f[members[0]])
    reg, H = trace_solution_batch(space, members, f - c, tol=tol, method=method)
    return (H[:, 0] if H.ndim == 2 else H) + c


@dataclass
class ReplacementSequence:
    system: CubeSystem
    root: int
    f: np.ndarray
    levels: list                # absolute levels k_0 .. k_0 + M
    fields: list                # f_k per level
    scale_lengths: list         # rho_k = 5 rho**k
    per_level_deficit: list     # ||(f - f_k) / rho_k||^2 on the root
    energy_ladder: list         # energy of f_k restricted to the root
    cube_terms: dict            # q -> H-trace(Q)^2 mu(Q), computed separately
    root_energy: float
    tol: float = 1e-10
    method: str = "auto"

    def correction(self, q: int) -> np.ndarray:
        k = int(self.system.level_of[q])
        phi = np.zeros_like(self.f)
        m = self.system.members(q)
        phi[m] = self.fields[self.levels.index(k)][m] - self.f[m]
        return phi


def replacement_sequence(space: MetricMeasureSpace, system: CubeSystem, root: int | None,
                         f, depth: int | None = None, tol: float = 1e-10,
                         method: str = "auto") -> ReplacementSequence:
    root = int(system.roots[0]) if root is None else int(root)
    f = np.asarray(f, dtype=float)
    if depth is None:
        depth = default_depth(system, root)
    k0 = int(system.level_of[root])
    if k0 + depth > system.k_max:
        raise ValueError("depth exceeds the levels of the system")
    desc = system.descendants(root, max_level=k0 + depth)
    rmem = system.members(root)
    w_root = space.measure[rmem]
    fields, deficits, ladder, scales, terms = [], [], [], [], {}
    for k in range(k0, k0 + depth + 1):
        fk = f.copy()
        rk = system.ell_at(k)
        for q in desc[k]:
            m = system.members(q)
            fk[m] = _trace_on(space, m, f, tol, method)
            # independent route through the coefficient module
            rec = coefficients(space, system.region(q), f, ("H-trace",), tol=tol)["H-trace"]
            terms[q] = rec.value ** 2 * system.cube_mass(q)
        ps, _ = gradient_field(space, fk)
        fields.append(fk)
        scales.append(rk)
        deficits.append(_sum_w(w_root, ((f[rmem] - fk[rmem]) / rk) ** 2))
        ladder.append(_sum_w(w_root, ps[rmem]))
    ps, _ = gradient_field(space, f)
    return ReplacementSequence(system, root, f, list(range(k0, k0 + depth + 1)), fields,
                               scales, deficits, ladder, terms, _sum_w(w_root, ps[rmem]),
                               tol, method)


def pythagoras_check(seq: ReplacementSequence) -> float:
    """Max over ``k`` and ``Q in D_k`` of the energy-splitting residual.

    Residuals are relative to the energy of ``f`` on the root (absolute if
    that energy is zero).
    """
    space, system = seq.system.space, seq.system
    scale = seq.root_energy if seq.root_energy > 0 else 1.0
    desc = system.descendants(seq.root, max_level=seq.levels[-1])
    worst = 0.0
    for i in range(len(seq.levels) - 1):
        a, b = seq.fields[i], seq.fields[i + 1]
        pa, _ = gradient_field(space, a)
        pb, _ = gradient_field(space, b)
        pd, _ = gradient_field(space, b - a)
        for q in desc[seq.levels[i]]:
            m = system.members(q)
            w = space.measure[m]
            r = _sum_w(w, pd[m]) - (_sum_w(w, pb[m]) - _sum_w(w, pa[m]))
            worst = max(worst, abs(r) / scale)
    return worst


def discrete_cont_residual(seq: ReplacementSequence) -> float:
    """Relative gap between the cube sum of H-trace terms and the level deficits.

    ``H-trace(Q)`` averages over ``Q`` with radius ``l(Q) = rho_k``, so
    multiplying by ``mu(Q)`` recovers the integral in the level deficit.
    """
    lhs = math.fsum(seq.cube_terms.values())
    rhs = math.fsum(seq.per_level_deficit)
    den = max(abs(lhs), abs(rhs))
    return 0.0 if den == 0 else abs(lhs - rhs) / den


def telescoping_report(seq: ReplacementSequence):
    """``(sum of deficits, root energy, ratio)``; ratio 0 for zero energy."""
    total = math.fsum(seq.per_level_deficit)
    en = seq.root_energy
    return total, en, (total / en if en > 0 else 0.0)


# ------------------------------------------------------------ Hessian fields

@dataclass
class HessianFieldReport:
    levels: list
    fields: list               # g_k per level
    level_sums: list           # ||rho_k g_k||^2
    total: float
    energy: float
    ratio: float
    assignment: object
    near_optimal: dict = field(default_factory=dict)


def hessian_field_sequence(space: MetricMeasureSpace, system: CubeSystem, f,
                           family: ShiftedFamily | None = None, k_start: int | None = None,
                           k_end: int | None = None, near_optimal_factor: float = 10.0,
                           near_optimal_cap: int = 400, count: int = 4,
                           seed: int = 0) -> HessianFieldReport:
    """``g_k = sum_Q |Hess l_Q|_HS 1_Q`` with ``l_Q`` the trace solution on ``R_Q``.

    Levels run from ``k*`` (see :func:`star_level`) to the default depth.
    For super cubes with at most ``near_optimal_cap`` vertices the report
    records how far ``H-trace(R)`` sits above ``H-exact(R)``.
    """
    f = np.asarray(f, dtype=float)
    if family is None:
        family = build_shifted_systems(space, rho=system.rho, count=count, seed=seed,
                                       sample_count=1)
    k_start = star_level(system) if k_start is None else k_start
    k_end = system.k_min + default_depth(system) if k_end is None else k_end
    k_end = max(k_end, k_start)
    cubes = [q for k in range(k_start, k_end + 1) for q in system.cubes_at(k)]
    assign = assign_super_cubes(system, family, cubes=cubes)
    systems = family.systems
    hs_cache: dict = {}
    near: dict = {}
    levels, fields, sums = [], [], []
    for k in range(k_start, k_end + 1):
        g = np.zeros(space.n)
        for q in system.cubes_at(k):
            key = assign.assignment[int(q)]
            if key not in hs_cache:
                S = systems[key[0]]
                mem = S.members(key[1])
                lq = f.copy()
                lq[mem] = _trace_on(space, mem, f)
                hs_cache[key] = np.sqrt(fd_hessian(space, lq).hs_norm_sq)
                if 1 < mem.size <= near_optimal_cap:
                    R = S.region(key[1])
                    rec = coefficients(space, R, f, ("H-trace", "H-exact"))
                    ex, tr = rec["H-exact"].value, rec["H-trace"].value
                    near[key] = tr / ex if ex > 0 else (1.0 if tr == 0 else math.inf)
            m = system.members(int(q))
            g[m] = hs_cache[key][m]
        levels.append(k)
        fields.append(g)
        sums.append(system.ell_at(k) ** 2 * _sum_w(space.measure, g ** 2))
    _, en = gradient_field(space, f)
    total = math.fsum(sums)
    vals = list(near.values())
    near_rep = {"count": len(vals), "max": max(vals, default=math.nan),
                "median": float(np.median(vals)) if vals else math.nan,
                "above_factor": int(sum(v > near_optimal_factor for v in vals)),
                "factor": near_optimal_factor}
    return HessianFieldReport(levels, fields, sums, total, en,
                              total / en if en > 0 else 0.0, assign, near_rep)


# ------------------------------------------------------- partition of unity

@dataclass
class PartitionOfUnity:
    level: int
    cubes: np.ndarray
    theta: sp.csr_matrix        # rows: cubes at the level, columns: vertices
    gradient_bound: float       # max |grad theta_Q| l(Q)
    laplacian_bound: float      # max |Delta theta_Q| l(Q)^2
    partition_error: float      # max |sum_Q theta_Q - 1|

    def weights(self, q: int) -> np.ndarray:
        i = int(np.searchsorted(self.cubes, q))
        return np.asarray(self.theta[i].todense()).ravel()


def bump_profile(d, ell):
    """1 on ``d <= l``, linear to 0 at ``d = 3 l``."""
    return np.clip((3.0 - np.asarray(d) / ell) / 2.0, 0.0, 1.0)


def partition_of_unity(space: MetricMeasureSpace, system: CubeSystem, level: int) -> PartitionOfUnity:
    cubes = system.cubes_at(level)
    ell = system.ell_at(level)
    rows, cols, vals = [], [], []
    for i, q in enumerate(cubes):
        x = int(system.center[q])
        mem = ball(space, x, 3 * ell).members
        psi = bump_profile(space.distances_from(x, mem), ell)
        keep = psi > 0
        rows.append(np.full(int(keep.sum()), i)); cols.append(mem[keep]); vals.append(psi[keep])
    P = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(len(cubes), space.n))
    colsum = np.asarray(P.sum(axis=0)).ravel()
    if np.any(colsum <= 0):
        raise AssertionError("a vertex is covered by no bump")
    T = (P @ sp.diags(1.0 / colsum)).tocsr()
    err = float(np.abs(np.asarray(T.sum(axis=0)).ravel() - 1.0).max())
    # per-cube pointwise gradients and Laplacians through sparse edge operators
    E = space.edges
    ne = E.shape[0]
    Dm = sp.csr_matrix((np.concatenate([-np.ones(ne), np.ones(ne)]),
                        (np.concatenate([np.arange(ne)] * 2), np.concatenate([E[:, 0], E[:, 1]]))),
                       shape=(ne, space.n))
    diff = (T @ Dm.T).tocsr()
    half = diff.multiply(diff).multiply(0.5 * space.conductance[None, :]).tocsr()
    inc = sp.csr_matrix((np.ones(2 * ne), (np.concatenate([E[:, 0], E[:, 1]]),
                                           np.concatenate([np.arange(ne)] * 2))),
                        shape=(space.n, ne))
    ps = (half @ inc.T).multiply(1.0 / space.measure[None, :]).tocsr()
    grad = math.sqrt(ps.max()) * ell if ps.nnz else 0.0
    lap = (T @ space.stiffness).multiply(1.0 / space.measure[None, :]).tocsr()
    lapb = float(abs(lap).max()) * ell ** 2 if lap.nnz else 0.0
    return PartitionOfUnity(level, cubes, T, grad, lapb, err)


@dataclass
class Interpolant:
    level: int
    values: np.ndarray
    lhs: float                  # ||f - p_k||^2
    coeff_sum: float            # sum_Q H-trace(6 B_Q)^2 mu(Q) rho_k^2
    ratio: float
    clipped: list


def interpolant(space: MetricMeasureSpace, system: CubeSystem, level: int, f,
                pou: PartitionOfUnity | None = None, dilation: float = 6.0) -> Interpolant:
    """``p_k = sum_Q theta_Q h_Q`` with ``h_Q`` the trace solution on ``6 B_Q``."""
    f = np.asarray(f, dtype=float)
    pou = partition_of_unity(space, system, level) if pou is None else pou
    ell = system.ell_at(level)
    p = np.zeros(space.n)
    csum = []
    clipped = []
    T = pou.theta
    for i, q in enumerate(pou.cubes):
        B = ball(space, int(system.center[q]), dilation * ell)
        if B.size == space.n or space.boundary[B.members].any():
            clipped.append(int(q))
        hq = f.copy()
        hq[B.members] = _trace_on(space, B.members, f)
        row = T.getrow(i)
        p[row.indices] += row.data * hq[row.indices]
        csum.append(ball_coefficients_sq(space, B, f)[0] * system.cube_mass(int(q)) * ell ** 2)
    lhs = _sum_w(space.measure, (f - p) ** 2)
    rhs = math.fsum(csum)
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs <= 1e-300 else math.inf)
    return Interpolant(level, p, lhs, rhs, ratio, clipped)
