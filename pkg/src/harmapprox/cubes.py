"""Nested dyadic cube systems on finite metric measure spaces.

Construction
------------
Nets are nested and greedy: ``X_k`` starts from ``X_{k-1}`` and scans the
vertices in a fixed order, adding every vertex at distance at least ``s_k``
from the current net, with ``s_k = 5 (1 - rho) rho**k``. Levels run from the
finest ``k`` whose net is a single point down to the first ``k`` whose net is
the whole vertex set.

Cubes are assembled bottom-up. At the finest level every vertex is its own
cube. A cube at level ``k + 1`` with center ``y`` joins the level-``k`` cube
of the nearest point of ``X_k`` to ``y``.
Partition and nesting therefore hold by construction, and a vertex reaches
its level-``k`` center through a chain of hops of length ``< s_j``,
``j >= k``, so ``Q`` lies in the open ball ``B(x_Q, 5 rho**k)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .mmspace import Ball, MetricMeasureSpace, ball, open_mask

__all__ = [
    "CubeSystem",
    "ValidationReport",
    "ShiftedFamily",
    "SuperCubeAssignment",
    "net_scale",
    "greedy_net",
    "build_nets",
    "build_cube_system",
    "validate_cube_system",
    "overlap_counts",
    "build_shifted_systems",
    "smallest_containing_cube",
    "assign_super_cubes",
    "cube_system_to_json",
    "cube_system_from_json",
]

_TIE_RTOL = 1e-12


def net_scale(rho: float, k: int) -> float:
    """Separation of the level-``k`` net."""
    return 5.0 * (1.0 - rho) * rho ** k


def greedy_net(space: MetricMeasureSpace, scale: float, order=None, seed_net=()):
    """Greedy maximal ``scale``-separated net scanned in ``order``.

    Returns ``(net, mind)`` with ``net`` in insertion order and ``mind`` the
    distance from every vertex to the net.
    """
    order = np.arange(space.n) if order is None else np.asarray(order)
    net = [int(v) for v in seed_net]
    mind = np.full(space.n, np.inf)
    for v in net:
        np.minimum(mind, space.distances_from(v), out=mind)
    for v in order:
        if mind[v] >= scale:
            net.append(int(v))
            np.minimum(mind, space.distances_from(int(v)), out=mind)
    return net, mind


def _top_level(space, rho):
    k = 0
    while net_scale(rho, k) <= space.diam:
        k -= 1
    while net_scale(rho, k + 1) > space.diam:
        k += 1
    return k


def build_nets(space: MetricMeasureSpace, rho: float = 0.5, k_min: int | None = None,
               k_max: int | None = None, order=None):
    """Nested greedy nets plus nearest-net-point maps.

    Returns ``(k_min, nets, nearest)`` where ``nets[i]`` is the sorted net at
    level ``k_min + i`` and ``nearest[i][v]`` is the nearest net point to
    ``v`` at that level (ties: oldest net point, then scan order). Without ``k_max``
    the levels continue until the net is every vertex.
    """
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    if k_min is None:
        k_min = _top_level(space, rho)
    if k_max is not None and k_min > k_max:
        raise ValueError("k_min must not exceed k_max")
    order = np.arange(space.n) if order is None else np.asarray(order)
    rank = np.empty(space.n, dtype=np.int64)
    rank[order] = np.arange(space.n)
    mind = np.full(space.n, np.inf)
    near = np.full(space.n, -1, dtype=np.int64)
    entry = np.full(space.n, np.iinfo(np.int64).max)
    in_net = np.zeros(space.n, dtype=bool)
    nets, nearest = [], []
    k = k_min
    while True:
        s = net_scale(rho, k)
        for v in order:
            if in_net[v] or mind[v] < s:
                continue
            in_net[v] = True
            entry[v] = k
            d = space.distances_from(int(v))
            tol = _TIE_RTOL * d
            closer = d < mind - tol
            # ties: the older net point wins, then the earlier one in ``order``
            tie = np.abs(d - mind) <= tol
            if tie.any():
                cur = near[tie]
                tie[tie] = (entry[cur] == k) & (rank[cur] > rank[v])
            upd = closer | tie
            near[upd] = v
            np.minimum(mind, d, out=mind)
        nets.append(np.flatnonzero(in_net))
        nearest.append(near.copy())
        if (k_max is None and in_net.all()) or (k_max is not None and k >= k_max):
            break
        k += 1
        if k - k_min > 200:
            raise RuntimeError("net construction did not terminate")
    return k_min, nets, nearest


@dataclass(eq=False)
class CubeSystem:
    """Nested partitions of the vertex set, one per level.

    ``labels[i][v]`` is the local index (into ``centers[i]``) of the cube of
    level ``k_min + i`` that contains ``v``. Global cube ids enumerate levels
    coarse to fine and, within a level, centers by vertex id.
    """

    space: MetricMeasureSpace
    rho: float
    k_min: int
    centers: list
    labels: list
    pruned: list = field(default_factory=list)
    tie_rule: str = "order=identity; ties=seniority,order"

    def __post_init__(self):
        sizes = [len(c) for c in self.centers]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self._member_index = []
        for lab, cen in zip(self.labels, self.centers):
            order = np.argsort(lab, kind="stable")
            starts = np.searchsorted(lab[order], np.arange(len(cen) + 1))
            self._member_index.append((order, starts))

    # -- shape
    @property
    def k_max(self) -> int:
        return self.k_min + len(self.centers) - 1

    @property
    def levels(self) -> range:
        return range(self.k_min, self.k_max + 1)

    @property
    def num_cubes(self) -> int:
        return int(self.offsets[-1])

    def _li(self, k: int) -> int:
        if not self.k_min <= k <= self.k_max:
            raise ValueError(f"level {k} outside {self.k_min}..{self.k_max}")
        return k - self.k_min

    def ell_at(self, k: int) -> float:
        return 5.0 * self.rho ** k

    def cubes_at(self, k: int) -> np.ndarray:
        i = self._li(k)
        return np.arange(self.offsets[i], self.offsets[i + 1])

    @cached_property
    def level_of(self) -> np.ndarray:
        out = np.empty(self.num_cubes, dtype=np.int64)
        for i in range(len(self.centers)):
            out[self.offsets[i]:self.offsets[i + 1]] = self.k_min + i
        return out

    @cached_property
    def center(self) -> np.ndarray:
        return np.concatenate([np.asarray(c, dtype=np.int64) for c in self.centers])

    def ell(self, q: int) -> float:
        return self.ell_at(int(self.level_of[q]))

    def cube_of(self, v: int, k: int) -> int:
        i = self._li(k)
        return int(self.offsets[i] + self.labels[i][v])

    def members(self, q: int) -> np.ndarray:
        i = int(self.level_of[q]) - self.k_min
        j = q - self.offsets[i]
        order, starts = self._member_index[i]
        return np.sort(order[starts[j]:starts[j + 1]])

    def mask(self, q: int) -> np.ndarray:
        m = np.zeros(self.space.n, dtype=bool)
        m[self.members(q)] = True
        return m

    @cached_property
    def parent(self) -> np.ndarray:
        """Parent id by center containment (``-1`` at the top level)."""
        par = np.full(self.num_cubes, -1, dtype=np.int64)
        for i in range(1, len(self.centers)):
            cen = np.asarray(self.centers[i])
            par[self.offsets[i]:self.offsets[i + 1]] = self.offsets[i - 1] + self.labels[i - 1][cen]
        return par

    @cached_property
    def _children(self) -> list:
        kids = [[] for _ in range(self.num_cubes)]
        for q, p in enumerate(self.parent):
            if p >= 0:
                kids[p].append(q)
        return kids

    def children(self, q: int) -> list:
        return self._children[q]

    @property
    def roots(self) -> np.ndarray:
        return self.cubes_at(self.k_min)

    def descendants(self, root: int, max_level: int | None = None) -> dict:
        """``{k: [cube ids]}`` for the descendants of ``root`` (itself included)."""
        out = {}
        frontier = [int(root)]
        k = int(self.level_of[root])
        top = self.k_max if max_level is None else min(max_level, self.k_max)
        while frontier and k <= top:
            out[k] = frontier
            frontier = [c for q in frontier for c in self._children[q]]
            k += 1
        return out

    def region(self, q: int) -> Ball:
        """The cube itself as a vertex set with radius ``l(Q)``."""
        mask = self.mask(q)
        return Ball(int(self.center[q]), self.ell(q), np.flatnonzero(mask),
                    np.flatnonzero(self.space.outer_boundary(mask)), "cube")

    def ball_of(self, q: int, A: float = 1.0) -> Ball:
        """``A B_Q = B(x_Q, A l(Q))``."""
        return ball(self.space, int(self.center[q]), A * self.ell(q))

    @cached_property
    def achieved_c0(self) -> float:
        """Largest ``c`` with ``B(x_Q, c l(Q)) within Q`` for every cube.

        Cubes equal to the whole space impose no constraint.
        """
        best = math.inf
        by_center: dict[int, list] = {}
        for i, cen in enumerate(self.centers):
            for j, x in enumerate(cen):
                by_center.setdefault(int(x), []).append(i)
        for x, lvls in by_center.items():
            d = self.space.distances_from(x)
            for i in lvls:
                lab = self.labels[i]
                outside = lab != lab[x]
                if not outside.any():
                    continue
                best = min(best, float(d[outside].min()) / self.ell_at(self.k_min + i))
        return best

    def cube_mass(self, q: int) -> float:
        return float(self.space.measure[self.members(q)].sum())


def build_cube_system(space: MetricMeasureSpace, nets=None, rho: float = 0.5,
                      order=None, tie_rule: str | None = None) -> CubeSystem:
    """Build the cube forest from nested nets (computed when not given)."""
    if nets is None:
        nets = build_nets(space, rho=rho, order=order)
    k_min, netlist, nearest = nets
    L = len(netlist)
    # center vertex of each vertex's cube, finest level first
    cen = np.arange(space.n)
    if netlist[-1].size != space.n:
        cen = nearest[-1].copy()
    cen_levels = [None] * L
    cen_levels[-1] = cen
    for i in range(L - 2, -1, -1):
        cen = nearest[i][cen]
        cen_levels[i] = cen
    centers, labels, pruned = [], [], []
    for i in range(L):
        used = np.unique(cen_levels[i])
        empty = np.setdiff1d(netlist[i], used)
        if empty.size:
            pruned.append((k_min + i, empty.tolist()))
        centers.append(used)
        labels.append(np.searchsorted(used, cen_levels[i]).astype(np.int64))
    rule = tie_rule or ("order=identity; ties=seniority,order" if order is None
                        else "order=permuted; ties=seniority,order")
    return CubeSystem(space, rho, k_min, centers, labels, pruned, rule)


# ---------------------------------------------------------------- validation

@dataclass
class ValidationReport:
    partition_ok: list
    nesting_ok: bool
    radius_ok: bool
    center_ok: bool
    achieved_c0: float
    overlap: dict          # A -> list of per-level maxima (coarse to fine)
    overlap_bounded: dict  # A -> max over levels <= 2 * max over coarsest three
    failures: list

    @property
    def ok(self) -> bool:
        return not self.failures


def overlap_counts(system: CubeSystem, A: float, k: int) -> np.ndarray:
    """Per cube ``Q`` at level ``k``: ``#{R : A B_R meets A B_Q}`` (vertex sets)."""
    space = system.space
    ids = system.cubes_at(k)
    r = A * system.ell_at(k)
    rows, cols = [], []
    for j, q in enumerate(ids):
        mem = np.flatnonzero(open_mask(space.distances_from(int(system.center[q])), r))
        rows.append(np.full(mem.size, j)); cols.append(mem)
    M = sp.csr_matrix((np.ones(sum(c.size for c in cols)),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(len(ids), space.n))
    G = (M @ M.T).tocsr()
    return np.diff(G.indptr)


def validate_cube_system(system: CubeSystem, overlap_A=(1, 3, 6)) -> ValidationReport:
    space = system.space
    failures = []
    partition_ok = []
    for i, (lab, cen) in enumerate(zip(system.labels, system.centers)):
        k = system.k_min + i
        ok = lab.shape == (space.n,) and lab.min() >= 0 and lab.max() < len(cen)
        ok = ok and np.array_equal(np.unique(lab), np.arange(len(cen)))
        partition_ok.append(bool(ok))
        if not ok:
            failures.append(f"partition fails at level {k}")
    nesting_ok = True
    for i in range(len(system.labels) - 1):
        fine, coarse = system.labels[i + 1], system.labels[i]
        # every fine cube must carry a single coarse label
        pairs = np.unique(np.stack([fine, coarse], axis=1), axis=0)
        if pairs.shape[0] != len(system.centers[i + 1]):
            nesting_ok = False
            failures.append(f"nesting fails between levels {system.k_min + i} and "
                            f"{system.k_min + i + 1}")
    radius_ok = center_ok = True
    for i, (lab, cen) in enumerate(zip(system.labels, system.centers)):
        ell = system.ell_at(system.k_min + i)
        for j, x in enumerate(cen):
            if lab[x] != j:
                center_ok = False
                failures.append(f"center {x} outside its cube at level {system.k_min + i}")
                continue
            mem = system._member_index[i][0][system._member_index[i][1][j]:
                                            system._member_index[i][1][j + 1]]
            d = space.distances_from(int(x), mem)
            if not np.all(open_mask(d, ell)):
                radius_ok = False
                failures.append(f"cube at {x}, level {system.k_min + i} leaves B(x_Q, l)")
    c0 = system.achieved_c0 if center_ok else 0.0
    if not c0 > 0:
        failures.append("achieved c0 is not positive")
    overlap, bounded = {}, {}
    for A in overlap_A:
        per = [int(overlap_counts(system, A, k).max()) for k in system.levels]
        overlap[A] = per
        bounded[A] = max(per) <= 2 * max(per[:3])
    return ValidationReport(partition_ok, nesting_ok, radius_ok, center_ok, c0,
                            overlap, bounded, failures)


# ----------------------------------------------------------- shifted systems

def smallest_containing_cube(system: CubeSystem, B: Ball):
    """Finest cube of ``system`` containing all of ``B`` (or ``None``).

    Containment is monotone in the level by nesting, so levels are bisected.
    """
    def inside(i):
        lab = system.labels[i]
        return bool(np.all(lab[B.members] == lab[B.center]))

    if not inside(0):
        return None
    lo, hi = 0, len(system.labels) - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if inside(mid):
            lo = mid
        else:
            hi = mid - 1
    return int(system.offsets[lo] + system.labels[lo][B.center])


@dataclass
class ShiftedFamily:
    systems: list
    cover_param: float          # max achieved l(Q)/r over sampled balls
    target: float
    covered_fraction: float     # share of samples with l(Q)/r <= target
    sufficient: bool
    samples: list               # (center, r, system, cube, ratio)


def build_shifted_systems(space: MetricMeasureSpace, rho: float = 0.5, count: int = 4,
                          seed: int = 0, target: float = 64.0,
                          sample_count: int = 200) -> ShiftedFamily:
    """``count`` systems from independently permuted net orders.

    System 0 uses the identity order. The cover parameter is estimated on
    balls with uniform random centers and log-uniform radii between the
    minimal edge length and the diameter.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    systems = [build_cube_system(space, rho=rho)]
    for _ in range(count - 1):
        systems.append(build_cube_system(space, rho=rho, order=rng.permutation(space.n)))
    srng = np.random.default_rng([seed, 1])
    lo, hi = space.min_edge_length, space.diam
    samples = []
    for _ in range(sample_count):
        x = int(srng.integers(space.n))
        r = lo * (hi / lo) ** srng.random()
        B = ball(space, x, r)
        best = None
        for j, S in enumerate(systems):
            q = smallest_containing_cube(S, B)
            ratio = S.ell(q) / r
            if best is None or ratio < best[4]:
                best = (x, r, j, q, ratio)
        samples.append(best)
    ratios = np.array([s[4] for s in samples])
    frac = float(np.mean(ratios <= target))
    return ShiftedFamily(systems, float(ratios.max()), target, frac,
                         bool(frac == 1.0), samples)


@dataclass
class SuperCubeAssignment:
    assignment: dict            # cube id -> (system index, cube id)
    ratio: dict                 # cube id -> l(R_Q) / l(Q)
    max_ratio: float
    multiplicity: dict          # (system, cube) -> count
    max_multiplicity: int
    proper_max_multiplicity: int  # over Q whose 10 B_Q is not the whole space
    misses: list


def assign_super_cubes(system: CubeSystem, family: ShiftedFamily | list,
                       dilation: float = 10.0, cubes=None) -> SuperCubeAssignment:
    """``R_Q`` = smallest cube over the family containing ``B(x_Q, 10 l(Q))``.

    Ties between equally sized cubes go to the lowest system index. ``cubes``
    restricts the assignment to a subset of cube ids.
    """
    systems = family.systems if isinstance(family, ShiftedFamily) else list(family)
    space = system.space
    assignment, ratio, mult, misses = {}, {}, {}, []
    whole = []
    for q in (range(system.num_cubes) if cubes is None else cubes):
        q = int(q)
        B = ball(space, int(system.center[q]), dilation * system.ell(q))
        best = None
        for j, S in enumerate(systems):
            r = smallest_containing_cube(S, B)
            if r is None:
                continue
            if best is None or S.ell(r) < best[2] * (1 - 1e-12):
                best = (j, r, S.ell(r))
        if best is None:
            misses.append(q)
            best = (0, int(systems[0].roots[0]), systems[0].ell(int(systems[0].roots[0])))
        assignment[q] = (best[0], best[1])
        ratio[q] = best[2] / system.ell(q)
        mult[(best[0], best[1])] = mult.get((best[0], best[1]), 0) + 1
        if B.size == space.n:
            whole.append(q)
    proper = {}
    wset = set(whole)
    for q, key in assignment.items():
        if q not in wset:
            proper[key] = proper.get(key, 0) + 1
    return SuperCubeAssignment(assignment, ratio, max(ratio.values()), mult,
                               max(mult.values()), max(proper.values(), default=0),
                               misses)


# ------------------------------------------------------------ serialization

def _runs(idx: np.ndarray) -> list:
    if idx.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) != 1)
    starts = np.concatenate([[0], breaks + 1])
    ends = np.concatenate([breaks, [idx.size - 1]])
    return [[int(idx[s]), int(e - s + 1)] for s, e in zip(starts, ends)]


def cube_system_to_json(system: CubeSystem) -> str:
    cubes = []
    for q in range(system.num_cubes):
        cubes.append({"id": q, "level": int(system.level_of[q]),
                      "center": int(system.center[q]),
                      "parent": int(system.parent[q]),
                      "members": _runs(system.members(q))})
    doc = {"rho": system.rho, "levels": [system.k_min, system.k_max],
           "tie_rule": system.tie_rule, "cubes": cubes}
    return json.dumps(doc, sort_keys=True)


def cube_system_from_json(space: MetricMeasureSpace, text: str) -> CubeSystem:
    doc = json.loads(text)
    k_min, k_max = doc["levels"]
    L = k_max - k_min + 1
    centers = [[] for _ in range(L)]
    labels = [np.full(space.n, -1, dtype=np.int64) for _ in range(L)]
    for c in sorted(doc["cubes"], key=lambda c: c["id"]):
        i = c["level"] - k_min
        j = len(centers[i])
        centers[i].append(c["center"])
        for start, length in c["members"]:
            labels[i][start:start + length] = j
    return CubeSystem(space, doc["rho"], k_min,
                      [np.asarray(c, dtype=np.int64) for c in centers], labels,
                      tie_rule=doc.get("tie_rule", "order=identity; ties=seniority,order"))
