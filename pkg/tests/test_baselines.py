import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coopmm import baselines as bl
from coopmm import geometry as geo
from coopmm import planner as pl
from coopmm import scene as sc
from coopmm.errors import Diverged

from _helpers import empty_scene


@pytest.fixture(scope="module")
def endpoints(scenes):
    s = scenes["open"]
    return s, bl.composite_endpoints(s)


def fd_residual_jacobian(scene, c, h=1e-6):
    n = len(c)
    J = np.zeros((6 * scene.n_robots, n))
    for k in range(n):
        d = np.zeros(n)
        d[k] = h
        rp = bl.closed_chain_residual(scene, None, c + d)
        rm = bl.closed_chain_residual(scene, None, c - d)
        diff = rp - rm
        for i in range(scene.n_robots):
            diff[6 * i + 3:6 * i + 6] = geo.wrap_angle(diff[6 * i + 3:6 * i + 6])
        J[:, k] = diff / (2 * h)
    return J


# -- composite vectors -------------------------------------------------------------------


def test_layout_and_split(scenes):
    s = scenes["corridor4"]
    models = s.models
    assert bl.composite_size(models) == 4 * 9 + 6
    c = np.arange(bl.composite_size(models), dtype=float)
    qs, t = bl.split_composite(models, c)
    assert [q[0] for q in qs] == [0, 9, 18, 27]
    assert np.array_equal(bl.join_composite(qs, t), c)


def test_composite_difference_wraps_only_angles(scenes):
    models = scenes["open"].models
    a = np.zeros(bl.composite_size(models))
    b = a.copy()
    b[2] = 2 * np.pi - 0.1    # heading
    b[3] = 2 * np.pi - 0.1    # joint, compared directly
    b[-1] = 2 * np.pi - 0.1   # object yaw
    d = bl.composite_difference(models, a, b)
    assert d[2] == pytest.approx(0.1) and d[-1] == pytest.approx(0.1)
    assert d[3] == pytest.approx(-(2 * np.pi - 0.1))


# -- closed chain -------------------------------------------------------------------


def test_endpoints_lie_on_manifold(endpoints):
    s, (c0, c1) = endpoints
    for c in (c0, c1):
        r = bl.closed_chain_residual(s, None, c)
        assert r.shape == (6 * s.n_robots,)
        assert np.linalg.norm(r) < 1e-8
        assert bl.composite_valid(s, None, c, tolerance=1e-6)


def test_residual_blocks_are_independent(endpoints):
    s, (c0, _) = endpoints
    c = c0.copy()
    c[9] += 0.1  # second robot's base x
    r = bl.closed_chain_residual(s, None, c)
    assert np.linalg.norm(r[:6]) < 1e-8 and np.linalg.norm(r[12:]) < 1e-8
    assert abs(r[6] - 0.1) < 1e-8


def test_constrained_jacobian_matches_finite_differences(endpoints, rng):
    s, (c0, _) = endpoints
    for _ in range(5):
        c = c0 + rng.normal(0, 0.05, len(c0))
        J = bl.constrained_jacobian(s, None, c)
        assert np.abs(J - fd_residual_jacobian(s, c)).max() < 1e-5


def test_constrained_jacobian_zero_pattern(endpoints):
    s, (c0, _) = endpoints
    J = bl.constrained_jacobian(s, None, c0)
    layout = bl.composite_layout(s.models)
    for i in range(s.n_robots):
        rows = slice(6 * i, 6 * i + 6)
        for j, sl in enumerate(layout):
            if j != i:
                assert np.all(J[rows, sl] == 0)
        assert np.any(J[rows, -6:] != 0)


def test_zero_offset_grasp_jacobian_is_identity(rng):
    g = sc.GraspSpec((0.0, 0.0, 0.0), (0.0, 0.0, 0.0))
    for _ in range(10):
        t = np.concatenate([rng.uniform(-3, 3, 3), rng.uniform([-1, -1, -3], [1, 1, 3])])
        assert np.allclose(bl.grasp_jacobian(t, g), np.eye(6), atol=1e-12)


def test_grasp_jacobian_matches_finite_differences(scenes, rng):
    s = scenes["open"]
    for r in s.robots:
        t = np.array([4, 4, 0.8, 0.1, -0.2, 0.7])
        W = bl.grasp_jacobian(t, r.grasp)
        h = 1e-6
        for k in range(6):
            d = np.zeros(6)
            d[k] = h
            gp = geo.to_pose(geo.compose(geo.to_transform(geo.Pose6.from_vector(t + d)), r.grasp.transform))
            gm = geo.to_pose(geo.compose(geo.to_transform(geo.Pose6.from_vector(t - d)), r.grasp.transform))
            col = geo.pose_difference(gp.as_vector(), gm.as_vector()) / (2 * h)
            assert np.allclose(W[:, k], col, atol=1e-6)


# -- projection -------------------------------------------------------------------


def test_projection_identity_on_manifold(endpoints):
    s, (c0, _) = endpoints
    p = bl.project(s, None, c0)
    assert p.iterations == 0 and np.array_equal(p.c, c0)


def test_projection_recovers_small_perturbations(endpoints, rng):
    s, (c0, _) = endpoints
    ok = 0
    for _ in range(20):
        d = np.zeros_like(c0)
        for sl in bl.composite_layout(s.models):
            d[sl.start + 3:sl.stop] = rng.normal(size=sl.stop - sl.start - 3)
        d *= 0.05 / np.linalg.norm(d)
        try:
            p = bl.project(s, None, c0 + d, bl.ProjectionParams(tolerance=1e-6, max_iter=20))
        except Diverged:
            continue
        assert np.linalg.norm(bl.closed_chain_residual(s, None, p.c)) <= 1e-6
        ok += 1
    assert ok >= 18


def test_projection_fixed_object_keeps_object(endpoints, rng):
    s, (c0, _) = endpoints
    c = c0 + rng.normal(0, 0.01, len(c0))
    p = bl.project(s, None, c, bl.ProjectionParams(tolerance=1e-8, fixed_object=True))
    assert np.array_equal(p.c[-6:], c[-6:])


def test_projection_of_unreachable_grasp_diverges(endpoints):
    s, (c0, _) = endpoints
    c = c0.copy()
    c[-4] += 5.0  # bases cannot climb, so the grasps are out of reach
    with pytest.raises(Diverged):
        bl.project(s, None, c, bl.ProjectionParams(max_iter=30, fixed_object=True))


def test_truncated_pinv_drops_small_values():
    J = np.diag([2.0, 1e-12])
    assert np.allclose(bl.truncated_pinv(J), np.diag([0.5, 0.0]))


# -- virtual structure -------------------------------------------------------------------


def test_vs_hull_over_low_obstacle_collides(scenes):
    s = scenes["low_block"]
    mid = geo.Pose6([4.0, 6.0, 0.75], [0, 0, np.pi / 2])
    assert not sc.object_in_collision(s, mid)
    assert bl.virtual_structure_check(s, None, mid)
    assert not bl.virtual_structure_check(s, None, s.start)


def test_vs_hull_contains_bases_and_object(scenes):
    s = scenes["open"]
    hull = bl.virtual_structure_hull(s, None, s.start)
    poly = sc.object_footprint(s, s.start)[0]
    bases = sc.nominal_bases(s, s.start)
    e = np.roll(hull, -1, axis=0) - hull

    def inside(p):
        rel = p - hull
        return np.all(e[:, 0] * rel[:, 1] - e[:, 1] * rel[:, 0] >= -1e-9)

    assert all(inside(p) for p in poly)
    assert all(inside(b[:2]) for b in bases)


def hull_oracle(scene, hull, n=120):
    lo, hi = hull.min(axis=0), hull.max(axis=0)
    gx, gy = np.meshgrid(np.linspace(lo[0], hi[0], n), np.linspace(lo[1], hi[1], n))
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    e = np.roll(hull, -1, axis=0) - hull
    rel = pts[:, None, :] - hull[None]
    inside = np.all(e[None, :, 0] * rel[..., 1] - e[None, :, 1] * rel[..., 0] > 1e-9, axis=1)
    return bool(np.any(scene.height_at(pts[inside]) > 0))


def test_vs_check_against_sampled_oracle(rng):
    s = empty_scene(obstacles=[{"rect": [3.0, 4.0, 3.4, 4.4], "height": 0.2}])
    disagree = 0
    for _ in range(100):
        t = [rng.uniform(2.5, 5.5), rng.uniform(2.5, 5.5), 0.75, 0, 0, rng.uniform(-np.pi, np.pi)]
        hull = bl.virtual_structure_hull(s, None, t)
        if not np.all(sc.in_world(s, hull)):
            continue
        if bl.virtual_structure_check(s, None, t) != hull_oracle(s, hull):
            disagree += 1
    assert disagree <= 3


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_vs_accepts_a_subset_of_hierarchical(scenes, cms_for, seed):
    s = scenes["low_block"]
    cms = cms_for(s)
    rng = np.random.default_rng(seed)
    t = pl.sample_uniform(rng, s.bounds_lo, s.bounds_hi)
    hier = pl.Validator(s, cms, rng=np.random.default_rng(seed))
    vs = pl.Validator(s, cms, rng=np.random.default_rng(seed),
                      extra_check=lambda p: not bl.virtual_structure_check(s, None, p))
    if vs(t):
        assert hier(t)


# -- frameworks -------------------------------------------------------------------


def test_decoupled_reports_failed_waypoint(scenes, cms_for):
    s = scenes["corridor"]
    req = pl.PlanRequest(s.start, s.goal, budget=s.budget, seed=0, max_iterations=2000)
    res = bl.plan_framework("decoupled", s, cms_for(s), req)
    assert res.status == bl.ROBOT_INFEASIBLE
    assert res.info["failed_waypoint"] > 0
    assert res.path is not None


def test_decoupled_succeeds_in_open_space(scenes, cms_for):
    s = scenes["open"]
    req = pl.PlanRequest(s.start, s.goal, budget=s.budget, seed=0, max_iterations=500)
    res = bl.plan_framework("decoupled", s, cms_for(s), req)
    assert res.success


def test_pj_open_scene_path_stays_on_manifold(scenes):
    s = scenes["open"]
    req = pl.PlanRequest(s.start, s.goal, budget=s.budget, seed=0, max_iterations=400)
    res = bl.plan_framework("pj", s, None, req)
    assert res.success
    assert res.configs is not None
    tol = bl.ProjectionParams().tolerance
    for c in res.configs:
        assert np.linalg.norm(bl.closed_chain_residual(s, None, c)) <= tol + 1e-12
    assert np.allclose(res.path.waypoints[0], s.start.as_vector(), atol=1e-9)


def test_unknown_framework(scenes):
    s = scenes["open"]
    with pytest.raises(ValueError):
        bl.plan_framework("magic", s, None, pl.PlanRequest(s.start, s.goal))
