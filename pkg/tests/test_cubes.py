import numpy as np
import pytest

from harmapprox import cubes
from harmapprox.mmspace import build_space


def test_greedy_net_on_path_matches_scan():
    X = build_space("path", n=101)
    net, _ = cubes.greedy_net(X, 0.25)
    # positions 0, 0.25, 0.5, 0.75, 1.0 up to rounding of i/100
    ref, last = [], None
    for v in range(101):
        if last is None or all(abs(v - p) / 100 >= 0.25 * (1 - 1e-12) for p in ref):
            ref.append(v)
            last = v
    assert net == ref


def test_path_cubes_are_intervals():
    S = cubes.build_cube_system(build_space("path", n=101))
    for q in range(S.num_cubes):
        m = S.members(q)
        assert np.all(np.diff(m) == 1)


@pytest.mark.parametrize("kind,params", [("path", {"n": 101}), ("grid2d", {"nx": 33, "ny": 33}),
                                         ("circle", {"n": 64}),
                                         ("weighted-interval", {"n": 65})])
def test_validation_passes(kind, params):
    S = cubes.build_cube_system(build_space(kind, **params))
    rep = cubes.validate_cube_system(S, overlap_A=(1,))
    assert rep.ok and rep.nesting_ok and rep.radius_ok and all(rep.partition_ok)
    assert rep.achieved_c0 >= 0.01


def test_path_overlap_at_a3():
    S = cubes.build_cube_system(build_space("path", n=101))
    per = [int(cubes.overlap_counts(S, 3, k).max()) for k in S.levels]
    # brute-force interval count
    X = S.space
    for k, got in zip(S.levels, per):
        ids = S.cubes_at(k)
        x = X.embedding[S.center[ids], 0]
        r = 3 * S.ell_at(k)
        grid = X.embedding[:, 0]
        sets = [set(np.flatnonzero(np.abs(grid - c) < r * (1 - 1e-12))) for c in x]
        ref = max(sum(1 for t in sets if t & s) for s in sets)
        assert got == ref


@pytest.mark.xfail(strict=True, reason="centers 2.5 rho^k apart give about 2*6/2.5 neighbours")
def test_path_overlap_at_a3_stated_bound():
    S = cubes.build_cube_system(build_space("path", n=101))
    assert max(int(cubes.overlap_counts(S, 3, k).max()) for k in S.levels) <= 7


@pytest.mark.xfail(strict=True, reason="balls of radius l overlap once centers are < 2l apart")
def test_grid_ball_overlap_at_a1_stated_value():
    S = cubes.build_cube_system(build_space("grid2d", nx=33, ny=33))
    assert max(int(cubes.overlap_counts(S, 1, k).max()) for k in S.levels) == 1


def test_cubes_disjoint_on_grid():
    # cubes of one level meet only themselves
    S = cubes.build_cube_system(build_space("grid2d", nx=33, ny=33))
    for k in S.levels:
        ids = S.cubes_at(k)
        inc = np.zeros((len(ids), S.space.n), dtype=int)
        for i, q in enumerate(ids):
            inc[i, S.members(int(q))] = 1
        assert np.array_equal(inc @ inc.T, np.diag(inc.sum(axis=1)))


def test_single_vertex_space_is_one_cube():
    X = build_space("path", n=2)
    S = cubes.build_cube_system(X)
    assert len(S.roots) == 1


def test_descendants_and_parent_consistent():
    S = cubes.build_cube_system(build_space("grid2d", nx=17, ny=17))
    root = int(S.roots[0])
    desc = S.descendants(root)
    assert sum(len(v) for v in desc.values()) == S.num_cubes
    for q in range(S.num_cubes):
        p = S.parent[q]
        if p >= 0:
            assert set(S.members(q)) <= set(S.members(int(p)))


def test_json_round_trip():
    X = build_space("grid2d", nx=17, ny=13)
    S = cubes.build_cube_system(X)
    T = cubes.cube_system_from_json(X, cubes.cube_system_to_json(S))
    for a, b in zip(S.labels, T.labels):
        assert np.array_equal(a, b)
    assert all(np.array_equal(a, b) for a, b in zip(S.centers, T.centers))


def test_shifted_family_cover():
    X = build_space("grid2d", nx=33, ny=33)
    fam = cubes.build_shifted_systems(X, count=4, seed=0, sample_count=100)
    assert fam.covered_fraction >= 0.95
    assert len(fam.systems) == 4


def test_super_cube_contains_dilated_ball():
    X = build_space("path", n=101)
    S = cubes.build_cube_system(X)
    fam = cubes.build_shifted_systems(X, count=3, seed=1, sample_count=20)
    A = cubes.assign_super_cubes(S, fam)
    from harmapprox.mmspace import ball
    for q, (j, r) in A.assignment.items():
        B = ball(X, int(S.center[q]), 10 * S.ell(q))
        assert set(B.members) <= set(fam.systems[j].members(r))
    assert A.max_ratio < np.inf


@pytest.mark.xfail(strict=True, reason="a level-j cube collects about rho^-5 cubes from level j+5")
def test_path_super_cube_multiplicity_stated_bound():
    X = build_space("path", n=101)
    S = cubes.build_cube_system(X)
    fam = cubes.build_shifted_systems(X, count=4, seed=0, sample_count=50)
    assert cubes.assign_super_cubes(S, fam).proper_max_multiplicity <= 20


def test_nesting_negative_control():
    X = build_space("path", n=9)
    S = cubes.build_cube_system(X)
    labels = [lab.copy() for lab in S.labels]
    i = len(labels) - 2
    fine = labels[i + 1]
    q = int(fine[4])
    # split one fine cube across two coarse labels
    mem = np.flatnonzero(fine == q)
    if mem.size < 2:
        mem = np.flatnonzero(fine == fine[3])
    labels[i][mem[0]] = (labels[i][mem[0]] + 1) % (labels[i].max() + 1)
    bad = cubes.CubeSystem(X, S.rho, S.k_min, S.centers, labels)
    rep = cubes.validate_cube_system(bad, overlap_A=(1,))
    assert not rep.nesting_ok or not all(rep.partition_ok)


def test_count_one_family_covers_small_balls():
    from harmapprox.mmspace import ball
    X = build_space("path", n=101)
    fam = cubes.build_shifted_systems(X, count=1, sample_count=1)
    S = fam.systems[0]
    c0 = S.achieved_c0
    for q in range(S.num_cubes):
        B = ball(X, int(S.center[q]), c0 * S.ell(q) / 4)
        assert set(B.members) <= set(S.members(q))
        assert cubes.smallest_containing_cube(S, B) is not None


def test_deterministic_build():
    X = build_space("sphere-mesh", n=200)
    a, b = cubes.build_cube_system(X), cubes.build_cube_system(X)
    assert cubes.cube_system_to_json(a) == cubes.cube_system_to_json(b)


def test_smallest_containing_cube_bisection_matches_scan():
    X = build_space("grid2d", nx=17, ny=17)
    S = cubes.build_cube_system(X)
    from harmapprox.mmspace import ball
    rng = np.random.default_rng(0)
    for _ in range(50):
        B = ball(X, int(rng.integers(X.n)), float(rng.uniform(0.05, 0.8)))
        ref = None
        for i in range(len(S.labels) - 1, -1, -1):
            lab = S.labels[i]
            if np.all(lab[B.members] == lab[B.center]):
                ref = int(S.offsets[i] + lab[B.center])
                break
        assert cubes.smallest_containing_cube(S, B) == ref


def test_invalid_rho():
    with pytest.raises(ValueError):
        cubes.build_nets(build_space("path", n=9), rho=1.5)
