import numpy as np
import pytest

from harmapprox import cubes, multiscale
from harmapprox.functions import make_function
from harmapprox.laplace import energy, split_region
from harmapprox.mmspace import build_space


def _grid(n):
    X = build_space("grid2d", nx=n, ny=n)
    return X, cubes.build_cube_system(X)


def test_harmonic_f_is_fixed():
    X, S = _grid(17)
    f = 1 + X.embedding @ np.array([0.5, -2.0])
    seq = multiscale.replacement_sequence(X, S, None, f)
    for fk in seq.fields:
        assert np.allclose(fk, f, atol=1e-12)
    assert max(seq.per_level_deficit) <= 1e-20


def test_path_tent_is_piecewise_linear_interpolation():
    X = build_space("path", n=257)
    S = cubes.build_cube_system(X)
    x = X.embedding[:, 0]
    f = 1 - np.abs(2 * x - 1)
    seq = multiscale.replacement_sequence(X, S, None, f, depth=2)
    for k, fk in zip(seq.levels, seq.fields):
        for q in S.cubes_at(k):
            m = S.members(int(q))
            ends = [m[0], m[-1]]
            ref = np.interp(x[m], x[ends], f[ends])
            assert np.allclose(fk[m], ref, atol=1e-12)
    # top level: the root's endpoints carry f = 0, so f_0 = 0
    ref0 = float(X.measure @ (f / seq.scale_lengths[0]) ** 2)
    assert seq.per_level_deficit[0] == pytest.approx(ref0, rel=1e-12)


def test_corrections_vanish_on_cube_boundaries():
    X, S = _grid(17)
    f = make_function(X, "lacunary")
    seq = multiscale.replacement_sequence(X, S, None, f)
    for q in range(S.num_cubes):
        if int(S.level_of[q]) in seq.levels:
            b = split_region(X, S.members(q)).boundary
            assert np.allclose(seq.correction(q)[b], 0.0)


def test_ladder_monotone_and_identities():
    X, S = _grid(33)
    f = np.random.default_rng(0).normal(size=X.n)
    seq = multiscale.replacement_sequence(X, S, None, f)
    lad = seq.energy_ladder
    tol = 1e-10 * seq.root_energy
    assert all(b >= a - tol for a, b in zip(lad, lad[1:]))
    assert lad[-1] <= seq.root_energy + tol
    assert multiscale.pythagoras_check(seq) <= 1e-9
    assert multiscale.discrete_cont_residual(seq) <= 1e-10


def test_pythagoras_negative_control():
    X, S = _grid(33)
    f = np.random.default_rng(1).normal(size=X.n)
    good = multiscale.replacement_sequence(X, S, None, f, depth=3)
    bad = multiscale.replacement_sequence(X, S, None, f, depth=3, tol=1e-3, method="cg")
    assert multiscale.pythagoras_check(bad) > 1e3 * max(multiscale.pythagoras_check(good), 1e-16)


def test_constant_gives_zero_report():
    X, S = _grid(17)
    seq = multiscale.replacement_sequence(X, S, None, np.full(X.n, 2.0))
    assert multiscale.telescoping_report(seq) == (0.0, 0.0, 0.0)


def test_depth_beyond_system_rejected():
    X, S = _grid(9)
    with pytest.raises(ValueError):
        multiscale.replacement_sequence(X, S, None, np.zeros(X.n), depth=100)


def test_star_level_on_unit_square():
    X, S = _grid(33)
    assert multiscale.star_level(S) == 6
    assert 30 * S.rho ** 6 <= X.diam / 2 < 30 * S.rho ** 5


@pytest.mark.parametrize("kind,params", [("grid2d", {"nx": 33, "ny": 33}), ("path", {"n": 129}),
                                         ("circle", {"n": 64}), ("sphere-mesh", {"n": 300})])
def test_partition_of_unity(kind, params):
    X = build_space(kind, **params)
    S = cubes.build_cube_system(X)
    for k in S.levels:
        P = multiscale.partition_of_unity(X, S, k)
        assert P.partition_error <= 1e-14
        T = P.theta.toarray()
        assert T.min() >= 0 and T.max() <= 1 + 1e-15
        for i, q in enumerate(P.cubes):
            d = X.distances_from(int(S.center[q]))
            assert np.all(T[i][d >= 3 * S.ell_at(k) * (1 - 1e-12)] == 0)
        assert P.gradient_bound <= 10


def test_single_cube_partition_is_one():
    X, S = _grid(9)
    P = multiscale.partition_of_unity(X, S, S.k_min)
    assert len(P.cubes) == 1
    assert np.array_equal(P.theta.toarray(), np.ones((1, X.n)))


def test_bump_profile():
    assert multiscale.bump_profile([0.0, 1.0, 2.0, 3.0, 4.0], 1.0).tolist() == [1, 1, 0.5, 0, 0]


def test_interpolant_of_harmonic_is_exact():
    X, S = _grid(17)
    f = X.embedding[:, 0] - 0.3 * X.embedding[:, 1]
    for k in S.levels[:4]:
        p = multiscale.interpolant(X, S, k, f)
        assert np.allclose(p.values, f, atol=1e-12)


def test_interpolant_error_decreases():
    X, S = _grid(33)
    f = make_function(X, "bump")
    # coarse levels see one global replacement; the error drops once 6B_Q < X
    errs = [multiscale.interpolant(X, S, k, f).lhs for k in S.levels]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 0.25 * errs[0]


def test_hessian_fields_vanish_for_affine():
    X, S = _grid(33)
    f = 2 * X.embedding[:, 0] + X.embedding[:, 1]
    rep = multiscale.hessian_field_sequence(X, S, f)
    assert all(np.abs(g).max() <= 1e-7 for g in rep.fields)
    assert rep.total <= 1e-12 * energy(X, f)


def test_hessian_fields_for_square_are_recorded():
    X, S = _grid(33)
    rep = multiscale.hessian_field_sequence(X, S, X.embedding[:, 0] ** 2)
    assert rep.total > 0 and np.isfinite(rep.ratio)
    assert rep.near_optimal["count"] >= 0
