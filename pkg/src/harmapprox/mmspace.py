"""Finite metric measure spaces.

A space is a connected weighted graph (conductances on edges) together with
a vertex measure and a metric. Generated spaces use a finite-volume scaling:
``c(x, y) = (dual face length) / (edge length)`` and ``mu(x) = cell volume``,
so that the discrete Dirichlet energy

    E(f) = 1/2 * sum_{x,y} c(x, y) (f(x) - f(y))^2

and the weighted L2 norms approach their continuum values as the resolution
grows. Triangulated surfaces (sphere, cone) use cotangent weights, which is
the same rule written per triangle.

The metric is evaluated lazily, one source vertex at a time, through
:meth:`MetricMeasureSpace.distances_from`; closed forms are used for every
generator so that no dense distance matrix is ever required.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, dijkstra
from scipy.spatial import ConvexHull, cKDTree

__all__ = [
    "MetricMeasureSpace",
    "Ball",
    "build_space",
    "from_graph",
    "ball",
    "open_mask",
    "doubling_constant",
    "doubling_constant_exhaustive",
    "average",
    "space_to_json",
    "space_from_json",
    "GENERATORS",
]

# Open balls are strict sublevel sets; the relative slack keeps points that
# sit exactly on the sphere (up to rounding) outside.
_OPEN_RTOL = 1e-12


def open_mask(d: np.ndarray, r: float) -> np.ndarray:
    """Boolean mask of ``d < r`` with a relative rounding guard."""
    return d < r * (1.0 - _OPEN_RTOL)


@dataclass(eq=False)
class MetricMeasureSpace:
    """Immutable finite metric measure space.

    Attributes
    ----------
    kind, params
        Generator name and parameters (``"graph"`` for explicit data).
    edges : (E, 2) int array
        Undirected edges with ``i < j``, sorted lexicographically.
    conductance, length : (E,) arrays
        Edge conductance ``c`` and edge length.
    measure : (n,) array
        Vertex masses ``mu(x) > 0``.
    embedding : (n, m) array or None
        Coordinates used for affine operations (flat spaces only).
    boundary : (n,) bool array
        Vertices on the boundary of the underlying domain (path endpoints,
        grid perimeter, cone rim). Always part of a region's boundary layer.
    grid_shape : tuple or None
        ``(n,)`` or ``(ny, nx)`` for regular grids; vertex id ``j*nx + i``.
    spacing : tuple or None
        Grid spacing per axis, matching ``grid_shape``.
    """

    kind: str
    params: dict
    edges: np.ndarray
    conductance: np.ndarray
    length: np.ndarray
    measure: np.ndarray
    embedding: np.ndarray | None = None
    boundary: np.ndarray | None = None
    grid_shape: tuple | None = None
    spacing: tuple | None = None
    metric_kind: str = "graph"
    metric_data: dict = field(default_factory=dict)
    diam_hint: float | None = None

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.conductance = np.asarray(self.conductance, dtype=float)
        self.length = np.asarray(self.length, dtype=float)
        self.measure = np.asarray(self.measure, dtype=float)
        if self.boundary is None:
            self.boundary = np.zeros(self.n, dtype=bool)
        for arr in (self.edges, self.conductance, self.length, self.measure,
                    self.boundary):
            arr.setflags(write=False)
        if np.any(self.measure <= 0) or not np.all(np.isfinite(self.measure)):
            raise ValueError("vertex measure must be positive and finite")
        if np.any(self.conductance < 0):
            raise ValueError("conductances must be nonnegative")
        if np.any(self.edges[:, 0] == self.edges[:, 1]):
            raise ValueError("self loops are not allowed")
        ncomp, _ = connected_components(self.weights, directed=False)
        if ncomp != 1:
            raise ValueError("space must be connected (positive-conductance edges)")

    @property
    def n(self) -> int:
        return int(self.measure.shape[0])

    @property
    def total_mass(self) -> float:
        return math.fsum(self.measure)

    @cached_property
    def weights(self) -> sp.csr_matrix:
        """Symmetric conductance matrix ``C[x, y] = c(x, y)``."""
        i, j = self.edges[:, 0], self.edges[:, 1]
        keep = self.conductance > 0
        rows = np.concatenate([i[keep], j[keep]])
        cols = np.concatenate([j[keep], i[keep]])
        vals = np.concatenate([self.conductance[keep]] * 2)
        n = self.measure.shape[0]
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        """Graph stiffness ``K = D - C``; ``-Laplacian = M^{-1} K``."""
        C = self.weights
        deg = np.asarray(C.sum(axis=1)).ravel()
        return (sp.diags(deg) - C).tocsr()

    @cached_property
    def min_edge_length(self) -> float:
        return float(self.length[self.conductance > 0].min())

    @cached_property
    def diam(self) -> float:
        if self.diam_hint is not None:
            return float(self.diam_hint)
        best = 0.0
        for x in range(self.n):
            best = max(best, float(self.distances_from(x).max()))
        return best

    @cached_property
    def _graph_dist_cache(self) -> dict:
        return {}

    def distances_from(self, x: int, idx: np.ndarray | None = None) -> np.ndarray:
        """Distances ``d(x, y)`` for all ``y`` (or for ``y`` in ``idx``)."""
        mk, md = self.metric_kind, self.metric_data
        if mk == "euclidean":
            P = self.embedding if idx is None else self.embedding[idx]
            return np.sqrt(((P - self.embedding[x]) ** 2).sum(axis=1))
        if mk == "torus":
            P = md["coords"] if idx is None else md["coords"][idx]
            per = md["periods"]
            delta = np.abs(P - md["coords"][x])
            delta = np.minimum(delta, per - delta)
            return np.sqrt((delta ** 2).sum(axis=1))
        if mk == "arc":
            t = md["t"] if idx is None else md["t"][idx]
            L = md["period"]
            delta = np.abs(t - md["t"][x])
            return np.minimum(delta, L - delta)
        if mk == "sphere":
            P = md["unit"] if idx is None else md["unit"][idx]
            cosang = np.clip(P @ md["unit"][x], -1.0, 1.0)
            return md["radius"] * np.arccos(cosang)
        if mk == "cone":
            r = md["r"] if idx is None else md["r"][idx]
            th = md["theta"] if idx is None else md["theta"][idx]
            alpha = md["alpha"]
            gap = np.abs(th - md["theta"][x]) % alpha
            gap = np.minimum(gap, alpha - gap)
            r0 = md["r"][x]
            sq = r * r + r0 * r0 - 2.0 * r * r0 * np.cos(gap)
            return np.sqrt(np.maximum(sq, 0.0))
        # shortest path under edge lengths
        cache = self._graph_dist_cache
        if x not in cache:
            L = sp.csr_matrix((np.concatenate([self.length] * 2),
                               (np.concatenate([self.edges[:, 0], self.edges[:, 1]]),
                                np.concatenate([self.edges[:, 1], self.edges[:, 0]]))),
                              shape=(self.n, self.n))
            cache[x] = dijkstra(L, directed=False, indices=x)
        d = cache[x]
        return d if idx is None else d[idx]

    @cached_property
    def _kdtree(self):
        if self.metric_kind == "euclidean":
            return cKDTree(self.embedding)
        if self.metric_kind == "torus":
            per = self.metric_data["periods"]
            return cKDTree(np.mod(self.metric_data["coords"], per), boxsize=per)
        return None

    def ball_mask(self, x: int, r: float) -> np.ndarray:
        """Mask of the open ball ``B(x, r)``; same distances as ``distances_from``."""
        tree = self._kdtree
        if tree is None:
            return open_mask(self.distances_from(x), r)
        pt = tree.data[x]
        cand = np.asarray(tree.query_ball_point(pt, r * (1 + 1e-9)), dtype=np.int64)
        mask = np.zeros(self.n, dtype=bool)
        if cand.size:
            mask[cand[open_mask(self.distances_from(x, cand), r)]] = True
        return mask

    def distance(self, x: int, y: int) -> float:
        return float(self.distances_from(x, np.array([y]))[0])

    @cached_property
    def neighbor_lists(self) -> tuple[np.ndarray, np.ndarray]:
        C = self.weights
        return C.indptr, C.indices

    def outer_boundary(self, mask: np.ndarray) -> np.ndarray:
        """Vertices outside ``mask`` adjacent to it (the exterior layer)."""
        C = self.weights
        touched = np.asarray(C @ mask.astype(float)).ravel() > 0
        return touched & ~mask


@dataclass(frozen=True)
class Ball:
    """Open ball ``{y : d(center, y) < radius}`` as a vertex set.

    ``exterior`` is the boundary-layer convention used by extension
    problems: vertices outside the ball adjacent to a member.
    """

    center: int
    radius: float
    members: np.ndarray
    exterior: np.ndarray
    convention: str = "exterior-neighbors"

    @property
    def size(self) -> int:
        return int(self.members.size)


def ball(space: MetricMeasureSpace, center: int, r: float) -> Ball:
    if r <= 0:
        raise ValueError("radius must be positive")
    mask = space.ball_mask(int(center), r)
    mask[center] = True
    members = np.flatnonzero(mask)
    exterior = np.flatnonzero(space.outer_boundary(mask))
    return Ball(int(center), float(r), members, exterior)


def average(space: MetricMeasureSpace, f: np.ndarray, region) -> float:
    region = np.asarray(region)
    if region.dtype == bool:
        region = np.flatnonzero(region)
    if region.size == 0:
        raise ValueError("average over an empty region")
    w = space.measure[region]
    return float(np.dot(w, np.asarray(f, dtype=float)[region]) / w.sum())


def _ball_mass(space, d, r):
    return float(space.measure[open_mask(d, r)].sum())


def doubling_constant(space: MetricMeasureSpace, sample_count: int = 200,
                      seed: int = 0) -> float:
    """Largest sampled ``mu(B(x, 2r)) / mu(B(x, r))``.

    Samples are drawn as a prefix-stable stream, so a larger ``sample_count``
    with the same seed sees a superset of the smaller run's pairs.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    u = rng.random((sample_count, 2))
    lo, hi = space.min_edge_length, space.diam
    best = 1.0
    for ux, ur in u:
        x = min(int(ux * space.n), space.n - 1)
        r = lo * (hi / lo) ** ur
        d = space.distances_from(x)
        m1 = _ball_mass(space, d, r) if r > 0 else space.measure[x]
        m1 = max(m1, space.measure[x])
        best = max(best, _ball_mass(space, d, 2 * r) / m1)
    return best


def doubling_constant_exhaustive(space: MetricMeasureSpace,
                                 radii=None) -> float:
    """Max ratio over every center and the given radii (default: dyadic)."""
    if radii is None:
        radii = []
        r = space.diam
        while r >= space.min_edge_length / 2:
            radii.append(r)
            r /= 2
    best = 1.0
    for x in range(space.n):
        d = space.distances_from(x)
        for r in radii:
            m1 = max(_ball_mass(space, d, r), space.measure[x])
            best = max(best, _ball_mass(space, d, 2 * r) / m1)
    return best


# ---------------------------------------------------------------- generators

def _sorted_edges(i, j, c, length):
    i, j = np.asarray(i), np.asarray(j)
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    order = np.lexsort((hi, lo))
    return (np.stack([lo[order], hi[order]], axis=1), np.asarray(c)[order],
            np.asarray(length)[order])


def from_graph(edges, conductance, measure, length=None, kind="graph",
               params=None, embedding=None) -> MetricMeasureSpace:
    """Space from explicit data; metric is shortest path under ``length``."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    conductance = np.asarray(conductance, dtype=float)
    length = np.ones(len(edges)) if length is None else np.asarray(length, float)
    e, c, L = _sorted_edges(edges[:, 0], edges[:, 1], conductance, length)
    emb = None if embedding is None else np.asarray(embedding, dtype=float)
    return MetricMeasureSpace(kind, dict(params or {}), e, c, L,
                              np.asarray(measure, float), embedding=emb,
                              metric_kind="graph")


def _path(n: int = 33, length: float = 1.0) -> MetricMeasureSpace:
    if n < 2 or length <= 0:
        raise ValueError("path needs n >= 2 and positive length")
    h = length / (n - 1)
    x = np.arange(n) * h
    i = np.arange(n - 1)
    edges, c, L = _sorted_edges(i, i + 1, np.full(n - 1, 1.0 / h), np.full(n - 1, h))
    boundary = np.zeros(n, dtype=bool)
    boundary[[0, -1]] = True
    # uniform cells of length L/n: total mass equals the interval length
    return MetricMeasureSpace("path", {"n": n, "length": length}, edges, c, L,
                              np.full(n, length / n), embedding=x[:, None],
                              boundary=boundary, grid_shape=(n,), spacing=(h,),
                              metric_kind="euclidean", diam_hint=length)


def _weighted_interval(n: int = 65, w: float = 4.0) -> MetricMeasureSpace:
    """Interval ``[0, 1]`` with density ``w**x`` (ratio ``w`` between ends)."""
    if n < 2 or w <= 0:
        raise ValueError("weighted-interval needs n >= 2 and w > 0")
    h = 1.0 / (n - 1)
    x = np.arange(n) * h
    dens = w ** x
    cell = np.full(n, h)
    cell[[0, -1]] = h / 2
    mid = w ** ((x[:-1] + x[1:]) / 2)
    i = np.arange(n - 1)
    edges, c, L = _sorted_edges(i, i + 1, mid / h, np.full(n - 1, h))
    boundary = np.zeros(n, dtype=bool)
    boundary[[0, -1]] = True
    return MetricMeasureSpace("weighted-interval", {"n": n, "w": w}, edges, c, L,
                              dens * cell, embedding=x[:, None], boundary=boundary,
                              metric_kind="euclidean", diam_hint=1.0)


def _circle(n: int = 64, length: float = 1.0) -> MetricMeasureSpace:
    if n < 3 or length <= 0:
        raise ValueError("circle needs n >= 3 and positive length")
    h = length / n
    i = np.arange(n)
    edges, c, L = _sorted_edges(i, (i + 1) % n, np.full(n, 1.0 / h), np.full(n, h))
    return MetricMeasureSpace("circle", {"n": n, "length": length}, edges, c, L,
                              np.full(n, h), metric_kind="arc",
                              metric_data={"t": i * h, "period": length},
                              diam_hint=(n // 2) * h)


def _grid2d(nx: int = 33, ny: int | None = None, width: float = 1.0,
            height: float = 1.0) -> MetricMeasureSpace:
    ny = nx if ny is None else ny
    if nx < 3 or ny < 3 or width <= 0 or height <= 0:
        raise ValueError("grid2d needs at least 3 points per axis")
    hx, hy = width / (nx - 1), height / (ny - 1)
    mx = np.ones(nx); mx[[0, -1]] = 0.5
    my = np.ones(ny); my[[0, -1]] = 0.5
    jj, ii = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    vid = jj * nx + ii
    # horizontal edges carry dual face length hy*my[j]
    a = vid[:, :-1].ravel(); b = vid[:, 1:].ravel()
    ch = (hy * my[jj[:, :-1]].ravel()) / hx
    a2 = vid[:-1, :].ravel(); b2 = vid[1:, :].ravel()
    cv = (hx * mx[ii[:-1, :]].ravel()) / hy
    edges, c, L = _sorted_edges(np.concatenate([a, a2]), np.concatenate([b, b2]),
                                np.concatenate([ch, cv]),
                                np.concatenate([np.full(a.size, hx), np.full(a2.size, hy)]))
    measure = (hx * hy * np.outer(my, mx)).ravel()
    coords = np.stack([(ii * hx).ravel(), (jj * hy).ravel()], axis=1)
    boundary = ((ii == 0) | (ii == nx - 1) | (jj == 0) | (jj == ny - 1)).ravel()
    return MetricMeasureSpace("grid2d", {"nx": nx, "ny": ny, "width": width,
                                         "height": height},
                              edges, c, L, measure, embedding=coords,
                              boundary=boundary, grid_shape=(ny, nx),
                              spacing=(hy, hx), metric_kind="euclidean",
                              diam_hint=math.hypot(width, height))


def _torus2d(nx: int = 33, ny: int | None = None, width: float = 1.0,
             height: float = 1.0) -> MetricMeasureSpace:
    ny = nx if ny is None else ny
    if nx < 3 or ny < 3 or width <= 0 or height <= 0:
        raise ValueError("torus2d needs at least 3 points per axis")
    hx, hy = width / nx, height / ny
    jj, ii = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    vid = jj * nx + ii
    a = vid.ravel(); b = (jj * nx + (ii + 1) % nx).ravel()
    a2 = vid.ravel(); b2 = (((jj + 1) % ny) * nx + ii).ravel()
    edges, c, L = _sorted_edges(np.concatenate([a, a2]), np.concatenate([b, b2]),
                                np.concatenate([np.full(a.size, hy / hx),
                                                np.full(a2.size, hx / hy)]),
                                np.concatenate([np.full(a.size, hx),
                                                np.full(a2.size, hy)]))
    coords = np.stack([(ii * hx).ravel(), (jj * hy).ravel()], axis=1)
    diam = math.hypot((nx // 2) * hx, (ny // 2) * hy)
    return MetricMeasureSpace("torus2d", {"nx": nx, "ny": ny, "width": width,
                                          "height": height},
                              edges, c, L, np.full(nx * ny, hx * hy),
                              grid_shape=None, metric_kind="torus",
                              metric_data={"coords": coords,
                                           "periods": np.array([width, height])},
                              diam_hint=diam)


def _cot(u, v):
    cross = u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]
    return (u * v).sum(axis=1) / np.abs(cross)


def _triangle_space(kind, params, tri, side, n, **kw):
    """Assemble cotangent conductances and barycentric masses.

    ``side(a, b)`` returns intrinsic edge lengths for vertex arrays ``a, b``;
    each triangle is laid out flat from its three side lengths.
    """
    A, B, Cv = tri[:, 0], tri[:, 1], tri[:, 2]
    la, lb, lc = side(B, Cv), side(Cv, A), side(A, B)   # opposite A, B, C
    s = (la + lb + lc) / 2
    area = np.sqrt(np.maximum(s * (s - la) * (s - lb) * (s - lc), 0.0))
    # cot of angle opposite each side: (b^2 + c^2 - a^2) / (4 area)
    cotA = (lb ** 2 + lc ** 2 - la ** 2) / (4 * area)
    cotB = (lc ** 2 + la ** 2 - lb ** 2) / (4 * area)
    cotC = (la ** 2 + lb ** 2 - lc ** 2) / (4 * area)
    i = np.concatenate([B, Cv, A]); j = np.concatenate([Cv, A, B])
    w = 0.5 * np.concatenate([cotA, cotB, cotC])
    ln = np.concatenate([la, lb, lc])
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    key = lo * n + hi
    uniq, inv = np.unique(key, return_inverse=True)
    c = np.bincount(inv, weights=w)
    L = np.zeros(uniq.size); L[inv] = ln
    clipped = int((c < 0).sum())
    c = np.maximum(c, 0.0)
    edges = np.stack([uniq // n, uniq % n], axis=1)
    mass = np.bincount(tri.ravel(), weights=np.repeat(area / 3, 3), minlength=n)
    params = dict(params)
    sp_ = MetricMeasureSpace(kind, params, edges, c, L, mass, **kw)
    sp_.mesh_triangles = tri
    sp_.mesh_area = float(math.fsum(area))
    sp_.clipped_weights = clipped
    return sp_


def _sphere_mesh(n: int = 1000, radius: float = 1.0) -> MetricMeasureSpace:
    if n < 12 or radius <= 0:
        raise ValueError("sphere-mesh needs n >= 12")
    k = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * k / n)
    theta = math.pi * (1 + 5 ** 0.5) * k
    unit = np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi),
                     np.cos(phi)], axis=1)
    hull = ConvexHull(unit)
    tri = np.sort(hull.simplices, axis=1)
    tri = tri[np.lexsort((tri[:, 2], tri[:, 1], tri[:, 0]))]

    def side(a, b):
        return radius * np.linalg.norm(unit[a] - unit[b], axis=1)

    space = _triangle_space("sphere-mesh", {"n": n, "radius": radius}, tri, side, n,
                            metric_kind="sphere",
                            metric_data={"unit": unit, "radius": radius},
                            diam_hint=None)
    # metric edge length is the geodesic, not the chord
    chord = np.linalg.norm(unit[space.edges[:, 0]] - unit[space.edges[:, 1]], axis=1)
    object.__setattr__(space, "length", radius * 2 * np.arcsin(np.minimum(chord / 2, 1)))
    space.length.setflags(write=False)
    return space


def _cone2d(deficit: float = math.pi / 2, n: int = 400,
            radius: float = 1.0) -> MetricMeasureSpace:
    """Flat cone of total angle ``2*pi - deficit`` cut at ``radius``.

    Concentric rings ``j = 1..J`` carry ``m0*j`` equally spaced points;
    neighbouring rings are zipped into triangles in angular order.
    """
    if not (0 < deficit < 2 * math.pi):
        raise ValueError("cone deficit must lie in (0, 2*pi)")
    if n < 10:
        raise ValueError("cone2d needs n >= 10")
    alpha = 2 * math.pi - deficit
    m0 = max(3, int(round(alpha / (math.pi / 3))))
    J = max(1, int(round((-1 + math.sqrt(1 + 8 * (n - 1) / m0)) / 2)))
    r = [0.0]; th = [0.0]; rings = [np.array([0])]
    for j in range(1, J + 1):
        m = m0 * j
        ids = np.arange(len(r), len(r) + m)
        rings.append(ids)
        r.extend([radius * j / J] * m)
        th.extend(list(alpha * (np.arange(m) + 0.5 * (j % 2)) / m))
    r = np.array(r); th = np.array(th); N = r.size
    tris = []
    m = m0
    for a in range(m):           # apex fan
        tris.append((0, rings[1][a], rings[1][(a + 1) % m]))
    for j in range(1, J):
        inner, outer = rings[j], rings[j + 1]
        ti = th[inner] / alpha; to = th[outer] / alpha
        p = q = 0
        ni, no = inner.size, outer.size
        # zip the two periodic rings by comparing unwrapped angles
        while p < ni or q < no:
            a_next = ti[(p + 1) % ni] + (p + 1) // ni
            b_next = to[(q + 1) % no] + (q + 1) // no
            if q >= no or (p < ni and a_next < b_next):
                tris.append((inner[p % ni], inner[(p + 1) % ni], outer[q % no]))
                p += 1
            else:
                tris.append((inner[p % ni], outer[q % no], outer[(q + 1) % no]))
                q += 1
    tri = np.array(tris, dtype=np.int64)

    def side(a, b):
        gap = np.abs(th[a] - th[b]) % alpha
        gap = np.minimum(gap, alpha - gap)
        return np.sqrt(np.maximum(r[a] ** 2 + r[b] ** 2 - 2 * r[a] * r[b] * np.cos(gap), 0))

    boundary = np.zeros(N, dtype=bool)
    boundary[rings[-1]] = True
    space = _triangle_space("cone2d", {"deficit": deficit, "n": n, "radius": radius},
                            tri, side, N, boundary=boundary, metric_kind="cone",
                            metric_data={"r": r, "theta": th, "alpha": alpha},
                            diam_hint=None)
    space.cone_area = alpha * radius ** 2 / 2
    return space


GENERATORS = {
    "path": _path,
    "circle": _circle,
    "grid2d": _grid2d,
    "torus2d": _torus2d,
    "sphere-mesh": _sphere_mesh,
    "cone2d": _cone2d,
    "weighted-interval": _weighted_interval,
}


def build_space(kind: str, **params: Any) -> MetricMeasureSpace:
    """Generate a named test space (see ``GENERATORS``)."""
    try:
        gen = GENERATORS[kind]
    except KeyError:
        raise ValueError(f"unknown space kind {kind!r}") from None
    for key in ("n", "nx", "ny"):
        if key in params and params[key] is not None and int(params[key]) <= 0:
            raise ValueError("resolution must be positive")
    return gen(**params)


# ------------------------------------------------------------ serialization

def space_to_json(space: MetricMeasureSpace) -> str:
    doc = {
        "kind": space.kind,
        "params": space.params,
        "vertices": space.n,
        "edges": [[int(a), int(b), float(c), float(L)] for (a, b), c, L in
                  zip(space.edges, space.conductance, space.length)],
        "measure": [float(m) for m in space.measure],
    }
    if space.embedding is not None:
        doc["embedding"] = space.embedding.tolist()
    return json.dumps(doc, sort_keys=True)


def space_from_json(text: str) -> MetricMeasureSpace:
    doc = json.loads(text)
    edges = np.array([[e[0], e[1]] for e in doc["edges"]], dtype=np.int64).reshape(-1, 2)
    cond = np.array([e[2] for e in doc["edges"]], dtype=float)
    length = np.array([e[3] for e in doc["edges"]], dtype=float)
    measure = np.array(doc["measure"], dtype=float)
    if doc["kind"] in GENERATORS:
        space = build_space(doc["kind"], **doc["params"])
        if (space.n != doc["vertices"] or not np.array_equal(space.edges, edges)
                or not np.allclose(space.conductance, cond, rtol=1e-12, atol=0)
                or not np.allclose(space.measure, measure, rtol=1e-12, atol=0)):
            raise ValueError("serialized space does not match its generator")
        return space
    return from_graph(edges, cond, measure, length=length, kind=doc["kind"],
                      params=doc["params"], embedding=doc.get("embedding"))
