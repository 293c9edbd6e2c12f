"""Carleson square functions over cubes and over balls.

The discrete sum over the descendants of a cube ``Q0`` is

    sum_{Q in D(Q0)} H(lam B_Q)**2 mu(Q),

and the continuous one is a quadrature of ``int int H(x, r)**2 dmu(x) dr/r``
on a geometric radius grid. Fields may be passed as an ``(n, m)`` array to
share every factorisation across ``m`` functions.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .coeffs import coefficients
from .cubes import CubeSystem
from .laplace import energy, trace_solution_batch
from .mmspace import Ball, MetricMeasureSpace, average, ball

__all__ = [
    "CarlesonReport",
    "ball_coefficients_sq",
    "cube_terms",
    "discrete_carleson",
    "quadrature_points",
    "continuous_square_function",
    "compare_discrete_continuous",
    "mean_term",
]


@dataclass
class CarlesonReport:
    params: dict
    per_level: dict
    total: float
    gradient_energy: float
    mean_term: float
    ratio_upper: float
    ratio_lower: float
    records: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"params": self.params,
                "perLevel": {str(k): v for k, v in self.per_level.items()},
                "total": self.total, "gradientEnergy": self.gradient_energy,
                "meanTerm": self.mean_term,
                "ratios": {"upper": self.ratio_upper, "lower": self.ratio_lower}}


def mean_term(space: MetricMeasureSpace, f) -> float:
    """``||(f - <f>_X) / diam(X)||^2``."""
    f = np.asarray(f, dtype=float)
    mean = average(space, f, np.arange(space.n))
    return math.fsum(space.measure * (f - mean) ** 2) / space.diam ** 2


def _as_columns(F):
    F = np.asarray(F, dtype=float)
    return (F[:, None], True) if F.ndim == 1 else (F, False)


def ball_coefficients_sq(space: MetricMeasureSpace, B: Ball, F, variant: str = "H-trace",
                         tol: float = 1e-10) -> np.ndarray:
    """Squared coefficient of every column of ``F`` on the ball ``B``."""
    F, _ = _as_columns(F)
    if B.members.size <= 1:
        return np.zeros(F.shape[1])
    if variant == "H-trace":
        # replacement commutes with constant shifts; shifting makes constants vanish exactly
        F = F - F[B.center]
        reg, H = trace_solution_batch(space, B.members, F, tol=tol)
        w = space.measure[reg.members]
        wsum = math.fsum(w)
        D = ((F[reg.members] - H) / B.radius) ** 2
        return np.array([math.fsum(w * D[:, j]) / wsum for j in range(F.shape[1])])
    return np.array([coefficients(space, B, F[:, j], (variant,), tol=tol)[variant].value ** 2
                     for j in range(F.shape[1])])


def _map(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def cube_terms(system: CubeSystem, F, lam: float, variant: str = "H-trace",
               cubes=None, threads: int = 1) -> dict:
    """``{q: H(lam B_Q)**2 mu(Q)}`` (one entry per column of ``F``)."""
    space = system.space
    F, _ = _as_columns(F)
    if variant == "Hrcd" and (space.grid_shape is None or space.embedding is None):
        raise ValueError("Hrcd requires a regular grid space")
    cubes = range(system.num_cubes) if cubes is None else cubes
    cubes = [int(q) for q in cubes]

    def one(q):
        B = ball(space, int(system.center[q]), lam * system.ell(q))
        return ball_coefficients_sq(space, B, F, variant) * system.cube_mass(q)

    vals = _map(one, cubes, threads)
    return dict(zip(cubes, vals))


def discrete_carleson(system: CubeSystem, F, lam: float = 3.0, variant: str = "H-trace",
                      root: int | None = None, min_level: int | None = None,
                      max_level: int | None = None, keep_records: bool = False,
                      threads: int = 1, terms: dict | None = None):
    """Cube-indexed square function over the descendants of ``root``.

    ``terms`` may carry precomputed :func:`cube_terms` output (same ``lam``
    and variant) so that several reports share one sweep. Returns one
    report, or a list when ``F`` has several columns.
    """
    if lam < 1:
        raise ValueError("lambda must be >= 1")
    space = system.space
    F, single = _as_columns(F)
    if root is None:
        if len(system.roots) != 1:
            raise ValueError("system has several roots; pass one")
        root = int(system.roots[0])
    root = int(root)
    desc = system.descendants(root, max_level=max_level)
    if min_level is not None:
        desc = {k: v for k, v in desc.items() if k >= min_level}
    todo = [q for qs in desc.values() for q in qs if terms is None or q not in terms]
    if todo:
        fresh = cube_terms(system, F, lam, variant, todo, threads)
        terms = dict(terms or {}) | fresh
    reports = []
    rmask = system.mask(root)
    for j in range(F.shape[1]):
        f = F[:, j]
        per = {k: math.fsum(terms[q][j] for q in qs) for k, qs in desc.items()}
        total = math.fsum(per.values())
        en = energy(space, f) if rmask.all() else energy(space, f, rmask)
        mt = mean_term(space, f)
        up = total / en if en > 0 else (0.0 if total == 0 else math.inf)
        lo_den = mt + total
        low = en / lo_den if lo_den > 0 else (0.0 if en == 0 else math.inf)
        recs = [(q, int(system.level_of[q]), terms[q][j]) for qs in desc.values()
                for q in qs] if keep_records else []
        reports.append(CarlesonReport(
            {"lambda": lam, "variant": variant, "root": root,
             "levels": [min(desc), max(desc)]},
            per, total, en, mt, up, low, recs))
    return reports[0] if single else reports


# ---------------------------------------------------------------- continuous

def quadrature_points(space: MetricMeasureSpace, members: np.ndarray, spacing: float):
    """Greedy net of ``members`` at ``spacing`` with Voronoi mass weights.

    When ``spacing`` is at most the minimal edge length every member is a
    node carrying its own mass.
    """
    members = np.asarray(members, dtype=np.int64)
    if spacing <= space.min_edge_length:
        return members, space.measure[members].copy()
    mind = np.full(members.size, np.inf)
    owner = np.zeros(members.size, dtype=np.int64)
    nodes = []
    for i, v in enumerate(members):
        if mind[i] >= spacing:
            d = space.distances_from(int(v), members)
            upd = d < mind
            owner[upd] = len(nodes)
            mind[upd] = d[upd]
            nodes.append(int(v))
    w = np.bincount(owner, weights=space.measure[members], minlength=len(nodes))
    return np.array(nodes, dtype=np.int64), w


def continuous_square_function(space: MetricMeasureSpace, F, z: int, R: float,
                               factor: float = 2.0, variant: str = "H-trace",
                               node_spacing: float = 0.25, threads: int = 1):
    """Quadrature of ``int_0^R int_{B(z,R)} H(x, r)^2 dmu(x) dr/r``.

    Radii run over ``R * factor**-j`` down to the minimal edge length, each
    weighted by ``log(factor)``. At radius ``r`` the x-integral uses the
    nodes of :func:`quadrature_points` with spacing ``node_spacing * r``
    (``0`` means every vertex).
    """
    if R <= 0:
        raise ValueError("R must be positive")
    if not 1 < factor <= 2:
        raise ValueError("radius grid factor must lie in (1, 2]")
    F, single = _as_columns(F)
    members = ball(space, z, R).members
    lw = math.log(factor)
    radii = []
    r = R
    while r >= space.min_edge_length * (1 - 1e-12):
        radii.append(r)
        r /= factor
    parts = []
    for r in radii:
        nodes, w = quadrature_points(space, members, node_spacing * r)

        def one(x, r=r):
            return ball_coefficients_sq(space, ball(space, int(x), r), F, variant)

        vals = np.array(_map(one, nodes, threads)).reshape(len(nodes), F.shape[1])
        parts.append([math.fsum(w * vals[:, j]) * lw for j in range(F.shape[1])])
    out = np.array([math.fsum(p[j] for p in parts) for j in range(F.shape[1])])
    return float(out[0]) if single else out


def compare_discrete_continuous(space: MetricMeasureSpace, system: CubeSystem, F,
                                z: int, R: float, lam: float = 3.0,
                                factor: float = 2.0, variant: str = "H-trace",
                                node_spacing: float = 0.25, threads: int = 1) -> dict:
    """Both directions of the discrete/continuous translation.

    Direction 1: the continuous integral on ``B(z, R)`` against the discrete
    sums over the descendants of every level-``k`` cube meeting ``B(z, R)``,
    where ``k`` is the finest level with ``5 rho**k >= R``.

    Direction 2: the discrete sum over ``D(Q)`` for the level-``k`` cube
    ``Q`` containing ``z`` against the continuous integral centred at
    ``x_Q`` with radius ``2 lam l(Q) / rho``.
    """
    F, single = _as_columns(F)
    rho = system.rho
    k = math.floor(math.log(R / 5.0) / math.log(rho) + 1e-12)
    if k < system.k_min:
        raise ValueError("system has too few coarse levels for the requested R")
    k = min(k, system.k_max)
    Bz = ball(space, z, R)
    hit = np.unique(system.labels[k - system.k_min][Bz.members]) + system.offsets[k - system.k_min]
    every = [c for q in hit for qs in system.descendants(int(q)).values() for c in qs]
    terms = cube_terms(system, F, lam, variant, every, threads)
    disc1 = np.zeros(F.shape[1])
    for q in hit:
        reps = discrete_carleson(system, F, lam, variant, root=int(q), terms=terms)
        disc1 += np.array([r.total for r in reps])
    cont1 = continuous_square_function(space, F, z, R, factor, variant, node_spacing, threads)
    Qz = system.cube_of(z, k)
    disc2 = np.array([r.total for r in discrete_carleson(system, F, lam, variant,
                                                          root=Qz, terms=terms)])
    R2 = 2 * lam * system.ell(Qz) / rho
    cont2 = continuous_square_function(space, F, int(system.center[Qz]), R2, factor,
                                       variant, node_spacing, threads)

    def ratio(a, b):
        if a == 0 and b == 0:
            return math.nan
        return a / b if b > 0 else math.inf

    out = []
    for j in range(F.shape[1]):
        out.append({"level": k, "cubes": [int(q) for q in hit], "continuous": float(cont1[j]),
                    "discrete": float(disc1[j]), "ratio1": ratio(cont1[j], disc1[j]),
                    "cube": int(Qz), "radius2": R2, "discrete2": float(disc2[j]),
                    "continuous2": float(cont2[j]), "ratio2": ratio(disc2[j], cont2[j]),
                    "degenerate": bool(cont1[j] == 0 and disc1[j] == 0)})
    return out[0] if single else out
