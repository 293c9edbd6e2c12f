"""Property tests on random connected weighted graphs."""

import math

import numpy as np
from hypothesis import given, settings, strategies as st

from harmapprox import carleson, coeffs, cubes, heat, laplace, multiscale
from harmapprox.mmspace import ball, from_graph


def _random_graph(seed, n):
    rng = np.random.default_rng(seed)
    # random spanning tree plus a few chords keeps the graph connected
    edges = [(i, int(rng.integers(i))) for i in range(1, n)]
    for _ in range(n // 2):
        a, b = rng.integers(n, size=2)
        if a != b:
            edges.append((int(a), int(b)))
    edges = np.array(sorted({tuple(sorted(e)) for e in edges}))
    return from_graph(edges, rng.uniform(0.5, 2, len(edges)), rng.uniform(0.5, 2, n),
                      length=rng.uniform(0.5, 1.5, len(edges))), rng


graphs = st.tuples(st.integers(0, 10 ** 6), st.integers(6, 40))
SETTINGS = settings(max_examples=25, deadline=None)


@SETTINGS
@given(graphs)
def test_cube_system_is_valid(g):
    X, _ = _random_graph(*g)
    S = cubes.build_cube_system(X)
    rep = cubes.validate_cube_system(S, overlap_A=(1,))
    assert rep.nesting_ok and rep.radius_ok and all(rep.partition_ok)


@SETTINGS
@given(graphs)
def test_exact_never_above_trace(g):
    X, rng = _random_graph(*g)
    f = rng.normal(size=X.n)
    B = ball(X, int(rng.integers(X.n)), float(rng.uniform(1, 4)))
    out = coeffs.coefficients(X, B, f, ("H-exact", "H-trace", "Hosc"))
    assert out["H-exact"].value <= out["H-trace"].value * (1 + 1e-10) + 1e-14
    assert out["H-exact"].value <= out["Hosc"].value * (1 + 1e-10) + 1e-14


@SETTINGS
@given(graphs)
def test_replacement_identities(g):
    X, rng = _random_graph(*g)
    S = cubes.build_cube_system(X)
    f = rng.normal(size=X.n)
    depth = min(3, S.k_max - S.k_min)
    seq = multiscale.replacement_sequence(X, S, None, f, depth=depth)
    assert multiscale.pythagoras_check(seq) <= 1e-9
    assert multiscale.discrete_cont_residual(seq) <= 1e-10
    lad = seq.energy_ladder
    assert all(b >= a - 1e-10 * seq.root_energy for a, b in zip(lad, lad[1:]))


@SETTINGS
@given(graphs)
def test_partition_of_unity_sums_to_one(g):
    X, _ = _random_graph(*g)
    S = cubes.build_cube_system(X)
    for k in S.levels:
        assert multiscale.partition_of_unity(X, S, k).partition_error <= 1e-14


@SETTINGS
@given(graphs, st.floats(1e-3, 10))
def test_heat_contracts_and_conserves_mass(g, t):
    X, rng = _random_graph(*g)
    d = heat.decompose(X)
    f = rng.normal(size=X.n)
    u = heat.heat_apply(d, f, t)
    norm = lambda v: math.sqrt(X.measure @ v ** 2)
    assert norm(u) <= norm(f) * (1 + 1e-12)
    assert abs(X.measure @ u - X.measure @ f) <= 1e-10 * X.measure.sum() * np.abs(f).max()


@SETTINGS
@given(graphs, st.floats(-5, 5))
def test_carleson_invariant_under_constants(g, c):
    X, rng = _random_graph(*g)
    S = cubes.build_cube_system(X)
    f = rng.normal(size=X.n)
    a = carleson.discrete_carleson(S, f).total
    b = carleson.discrete_carleson(S, f + c).total
    assert abs(a - b) <= 1e-9 * max(a, 1e-300)


@SETTINGS
@given(graphs)
def test_energy_is_minimised_by_replacement(g):
    X, rng = _random_graph(*g)
    f = rng.normal(size=X.n)
    B = ball(X, int(rng.integers(X.n)), float(rng.uniform(1, 4)))
    h = laplace.trace_solution(X, B, f).values
    assert laplace.energy(X, h) <= laplace.energy(X, f) * (1 + 1e-12)
