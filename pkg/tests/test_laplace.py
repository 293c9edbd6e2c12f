import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from harmapprox import laplace
from harmapprox.mmspace import ball, build_space


def test_path5_linear_interpolation():
    X = build_space("path", n=5)
    h = laplace.harmonic_extension(X, np.arange(5), {0: 1.0, 4: 3.0})
    assert np.allclose(h.values, [1.0, 1.5, 2.0, 2.5, 3.0], atol=1e-14)


def test_path5_trace_of_oscillation_is_zero():
    X = build_space("path", n=5)
    f = np.array([0.0, 1.0, 0.0, 1.0, 0.0])
    h = laplace.trace_solution(X, np.arange(5), f)
    assert np.allclose(h.values, 0.0, atol=1e-14)
    assert np.allclose(h.correction, -f)


def test_dense_oracle_on_random_graph():
    # interior block solve with scipy.linalg as an independent route
    rng = np.random.default_rng(3)
    X = build_space("grid2d", nx=7, ny=7)
    region = np.arange(X.n)
    g = rng.normal(size=X.n)
    h = laplace.harmonic_extension(X, region, g)
    reg = laplace.split_region(X, region)
    K = X.stiffness.toarray()
    I, Bd = reg.interior, reg.boundary
    ref = sla.solve(K[np.ix_(I, I)], -K[np.ix_(I, Bd)] @ g[Bd])
    assert np.allclose(h.values[I], ref, atol=1e-12)
    assert h.values[Bd] == pytest.approx(g[Bd])


def test_pythagoras_and_orthogonality():
    X = build_space("grid2d", nx=17, ny=17)
    rng = np.random.default_rng(0)
    f = rng.normal(size=X.n)
    B = ball(X, 8 * 17 + 8, 0.3)
    h = laplace.trace_solution(X, B, f)
    ef, eh = laplace.energy(X, f, B.members), laplace.energy(X, h.values, B.members)
    ed = laplace.energy(X, f - h.values, B.members)
    assert abs(ef - eh - ed) <= 1e-12 * ef
    assert abs(laplace.bilinear(X, h.values, f - h.values, B.members)) <= 1e-12 * ef


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10 ** 6), scale=st.floats(0.01, 1.0))
def test_harmonic_extension_minimises_energy(seed, scale):
    X = build_space("grid2d", nx=9, ny=9)
    rng = np.random.default_rng(seed)
    f = rng.normal(size=X.n)
    reg = laplace.split_region(X, np.arange(X.n))
    h = laplace.trace_solution(X, np.arange(X.n), f).values
    v = np.zeros(X.n)
    v[reg.interior] = scale * rng.normal(size=reg.interior.size)
    assert laplace.energy(X, h + v) >= laplace.energy(X, h) * (1 - 1e-12)


def test_max_principle():
    X = build_space("grid2d", nx=13, ny=13)
    g = np.random.default_rng(1).uniform(-2, 5, X.n)
    reg = laplace.split_region(X, np.arange(X.n))
    h = laplace.harmonic_extension(X, np.arange(X.n), g).values
    assert h.max() <= g[reg.boundary].max() + 1e-12
    assert h.min() >= g[reg.boundary].min() - 1e-12


def test_laplacian_of_affine_vanishes_inside():
    X = build_space("grid2d", nx=11, ny=11)
    f = 2 * X.embedding[:, 0] - X.embedding[:, 1]
    L = laplace.laplacian(X, f)
    assert np.allclose(L[~X.boundary], 0.0, atol=1e-10)


def test_caccioppoli_for_harmonic_field():
    X = build_space("grid2d", nx=33, ny=33)
    x, y = X.embedding.T
    u = x * x - y * y
    for r in (0.1, 0.2):
        B = ball(X, 16 * 33 + 16, r)
        assert laplace.caccioppoli_ratio(X, B, u) <= 16


def test_poincare_constant_on_path():
    assert laplace.poincare_constant(build_space("path", n=101), samples=60) <= 2


def test_sobolev_poincare_for_tent():
    X = build_space("path", n=101)
    B = ball(X, 50, 0.2)
    u = np.clip(0.2 - np.abs(X.embedding[:, 0] - 0.5), 0, None)
    assert 0 < laplace.sobolev_poincare_ratio(X, B, u) <= 1


def test_cg_negative_control_is_less_accurate():
    X = build_space("grid2d", nx=33, ny=33)
    f = np.random.default_rng(2).normal(size=X.n)
    exact = laplace.trace_solution(X, np.arange(X.n), f).values
    rough = laplace.trace_solution(X, np.arange(X.n), f, tol=1e-3, method="cg").values
    tight = laplace.trace_solution(X, np.arange(X.n), f, tol=1e-12, method="cg").values
    assert np.abs(rough - exact).max() > 100 * np.abs(tight - exact).max()


def test_cg_failure_raises():
    X = build_space("grid2d", nx=33, ny=33)
    f = np.random.default_rng(2).normal(size=X.n)
    with pytest.raises(laplace.SolverError):
        laplace.harmonic_extension(X, np.arange(X.n), f, tol=1e-14, method="cg", maxiter=2)


def test_region_without_boundary_takes_mean():
    X = build_space("torus2d", nx=8, ny=8)
    f = np.arange(X.n, dtype=float)
    h = laplace.trace_solution(X, np.arange(X.n), f)
    assert np.allclose(h.values, f.mean())


def test_batch_matches_single():
    X = build_space("grid2d", nx=13, ny=13)
    F = np.random.default_rng(4).normal(size=(X.n, 3))
    B = ball(X, 80, 0.35)
    reg, H = laplace.trace_solution_batch(X, B, F)
    for j in range(3):
        assert np.allclose(H[:, j], laplace.trace_solution(X, B, F[:, j]).values[reg.members])


def test_extension_operator_reproduces_solve():
    X = build_space("grid2d", nx=9, ny=9)
    g = np.random.default_rng(5).normal(size=X.n)
    B = ball(X, 40, 0.4)
    reg, E = laplace.extension_operator(X, B)
    h = laplace.harmonic_extension(X, B, g).values
    assert np.allclose(E @ g[reg.boundary], h[reg.members], atol=1e-12)


def test_explicit_boundary_validation():
    X = build_space("path", n=5)
    with pytest.raises(ValueError):
        laplace.harmonic_extension(X, [0, 1, 2], {0: 0.0})
    with pytest.raises(ValueError):
        laplace.split_region(X, np.array([], dtype=int))
