import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from harmapprox import laplace
from harmapprox.mmspace import (average, ball, build_space, doubling_constant,
                                doubling_constant_exhaustive, from_graph, open_mask,
                                space_from_json, space_to_json)


def test_path3_measure_and_distance():
    X = build_space("path", n=3)
    assert np.allclose(X.measure, 1 / 3)
    assert X.distances_from(0)[2] == pytest.approx(1.0, abs=1e-15)


def test_path3_energy_of_identity_is_one():
    # continuum value of int_0^1 |f'|^2 for f(x) = x
    X = build_space("path", n=3)
    assert laplace.energy(X, np.array([0.0, 0.5, 1.0])) == pytest.approx(1.0, rel=1e-14)


def test_grid_energy_of_coordinate():
    X = build_space("grid2d", nx=33, ny=33)
    assert laplace.energy(X, X.embedding[:, 0]) == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("kind,params", [("path", {"n": 0}), ("grid2d", {"nx": -1}),
                                         ("cone2d", {"deficit": 0.0}),
                                         ("cone2d", {"deficit": 2 * math.pi}),
                                         ("no-such-kind", {})])
def test_invalid_parameters_raise(kind, params):
    with pytest.raises(ValueError):
        build_space(kind, **params)


def test_grid_ball_matches_brute_force():
    X = build_space("grid2d", nx=33, ny=33)
    c = 16 * 33 + 16
    B = ball(X, c, 0.25)
    d = np.sqrt(((X.embedding - X.embedding[c]) ** 2).sum(axis=1))
    assert B.size == int((d < 0.25 * (1 - 1e-12)).sum())


@settings(max_examples=40, deadline=None)
@given(c=st.integers(0, 17 * 17 - 1), r=st.floats(0.01, 2.0))
def test_ball_mask_equals_brute_force_on_torus(c, r):
    X = build_space("torus2d", nx=17, ny=17)
    got = np.flatnonzero(X.ball_mask(c, r))
    ref = np.flatnonzero(open_mask(X.distances_from(c), r))
    assert np.array_equal(got, ref)


def test_torus_distance_wraps():
    X = build_space("torus2d", nx=8, ny=8)
    assert X.distances_from(0)[7] == pytest.approx(1 / 8)


def test_cone_mass_against_mesh_and_cone_area():
    X = build_space("cone2d", deficit=math.pi / 2, n=400)
    mass = math.fsum(X.measure)
    assert mass == pytest.approx(X.mesh_area, rel=1e-12)
    assert abs(mass - X.cone_area) / X.cone_area <= 0.02


def test_sphere_mass_close_to_surface_area():
    X = build_space("sphere-mesh", n=1000)
    assert abs(math.fsum(X.measure) - 4 * math.pi) / (4 * math.pi) < 0.01


def test_weighted_interval_mass():
    X = build_space("weighted-interval", n=257, w=4.0)
    assert math.fsum(X.measure) == pytest.approx(3 / math.log(4), rel=1e-3)


def test_average_hand_computation():
    X = build_space("path", n=5)
    f = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    assert average(X, f, [0, 1, 2]) == pytest.approx(2.0)
    assert average(X, f, np.arange(5)) == pytest.approx(3.0)


def test_doubling_constants():
    assert doubling_constant(build_space("path", n=101), sample_count=300) <= 3
    assert doubling_constant_exhaustive(build_space("grid2d", nx=33, ny=33)) <= 16


def test_doubling_sample_stream_is_prefix_stable():
    X = build_space("path", n=101)
    assert doubling_constant(X, 50) <= doubling_constant(X, 100)


def test_json_round_trip():
    for kind, params in [("grid2d", {"nx": 9, "ny": 7}), ("sphere-mesh", {"n": 60})]:
        X = build_space(kind, **params)
        Y = space_from_json(space_to_json(X))
        assert np.array_equal(X.edges, Y.edges)
        assert np.allclose(X.measure, Y.measure)
    G = from_graph(np.array([[0, 1], [1, 2]]), [1.0, 2.0], [1.0, 1.0, 1.0])
    H = space_from_json(space_to_json(G))
    assert np.allclose(H.conductance, [1.0, 2.0])


def test_disconnected_graph_rejected():
    with pytest.raises(ValueError):
        from_graph(np.array([[0, 1], [2, 3]]), [1.0, 1.0], np.ones(4))
