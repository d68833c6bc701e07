import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from coopmm import geometry as geo
from coopmm import planner as pl
from coopmm import scene as sc

from _helpers import empty_scene

LO = np.array([0, 0, 0.5, -0.2, -0.2, -np.pi])
HI = np.array([8, 8, 1.0, 0.2, 0.2, np.pi])


def request(scene, **kw):
    kw.setdefault("budget", 10.0)
    return pl.PlanRequest(scene.start, scene.goal, **kw)


# -- metric helpers -------------------------------------------------------------------


def test_distance_uses_wrapped_angles():
    a = [0, 0, 0, 0, 0, np.pi - 0.05]
    b = [0, 0, 0, 0, 0, -np.pi + 0.05]
    assert pl.distance(a, b) == pytest.approx(pl.ROT_WEIGHT * 0.1)
    assert pl.distances(np.array([a]), b)[0] == pytest.approx(pl.distance(a, b))


@settings(max_examples=60)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.0))
def test_steer_contract(seed, step):
    rng = np.random.default_rng(seed)
    a, b = pl.sample_uniform(rng, LO, HI), pl.sample_uniform(rng, LO, HI)
    new = pl.steer(a, b, step)
    assert pl.distance(a, new) <= step + 1e-9
    if pl.distance(a, b) <= step:
        assert pl.distance(new, b) < 1e-9
    else:
        # moving along the straight line: the rest of the way is what remains
        assert pl.distance(new, b) == pytest.approx(pl.distance(a, b) - step, abs=1e-9)


def test_interpolate_spacing():
    a, b = np.zeros(6), np.array([1.0, 0, 0, 0, 0, 0])
    pts = pl.interpolate(a, b, 0.15)
    chain = np.vstack([a, pts, b])
    gaps = [pl.distance(chain[i], chain[i + 1]) for i in range(len(chain) - 1)]
    assert max(gaps) <= 0.15 + 1e-12
    assert len(pl.interpolate(a, b, 2.0)) == 0


def test_sample_and_extend_contract(rng):
    tree = pl.Tree(np.array([4, 4, 0.7, 0, 0, 0.0]))
    for _ in range(200):
        new, i, x = pl.sample_and_extend(tree, LO, HI, 0.3, rng)
        d_all = pl.distances(tree.nodes[:tree.n], x)
        assert d_all[i] == pytest.approx(d_all.min())
        assert pl.distance(tree.nodes[i], new) <= 0.3 + 1e-9
        assert np.all(new >= LO - 1e-9) and np.all(new <= HI + 1e-9)
        tree.add(new, i)
    assert tree.n == 201


def test_uniform_sampling_chi_square():
    rng = np.random.default_rng(2024)
    xs = np.array([pl.sample_uniform(rng, LO, HI) for _ in range(5000)])
    for k in range(6):
        counts, _ = np.histogram(xs[:, k], bins=10, range=(LO[k], HI[k]))
        assert sps.chisquare(counts).pvalue > 1e-3


def test_tree_growth_and_path():
    t = pl.Tree(np.zeros(6), capacity=2)
    a = t.add(np.ones(6), 0)
    b = t.add(2 * np.ones(6), a)
    assert [p[0] for p in t.path_to(b)] == [0, 1, 2]


# -- allowed sampling region -------------------------------------------------------------------


def test_asr_cmcl_finds_base_quickly(scenes, cm):
    s = scenes["open"]
    rng = np.random.default_rng(0)
    found = 0
    for T, r in zip(sc.grasp_transforms(s, s.start), s.robots):
        smp = pl.sample_in_asr(s, cm, r.model, T, max_samples=50, rng=rng, t_obj=s.start)
        assert smp is not None
        b = smp.base.as_vector()
        assert not sc.base_in_collision(s, b, r.model.footprint_radius)
        pose = pl.pose_in_base_frame(T.R, T.p, b[None])[0]
        assert cm.query(pose) == pytest.approx(smp.metric)
        assert smp.metric >= pl.DEFAULT_THRES
        found += 1
    assert found == s.n_robots


def test_pose_in_base_frame_matches_transform_oracle(rng):
    for _ in range(30):
        g = geo.Pose6(rng.uniform(-3, 3, 3), [0.1, -0.2, rng.uniform(-3, 3)])
        T = geo.to_transform(g)
        b = np.array([rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-3, 3)])
        B = geo.Transform(geo.rot_z(b[2]), [b[0], b[1], 0.0])
        want = geo.to_pose(geo.compose(geo.invert(B), T)).as_vector()
        got = pl.pose_in_base_frame(T.R, T.p, b[None])[0]
        assert np.allclose(geo.pose_difference(got, want), 0.0, atol=1e-9)


def test_asr_rejects_unreachable_height(scenes, cm):
    s = scenes["open"]
    T = geo.to_transform(geo.Pose6([4, 4, 10.0], [0, 0, 0]))
    model = s.robots[0].model
    assert pl.sample_in_asr(s, cm, model, T, max_samples=500) is None
    assert pl.sample_in_asr(s, cm, model, T, max_samples=50, mode="ikcl") is None


def test_asr_empty_bounds(scenes, cm):
    s = scenes["open"]
    T = geo.to_transform(geo.Pose6([4, 4, 0.8], [0, 0, 0]))
    assert pl.sample_in_asr(s, cm, s.robots[0].model, T, bounds=[[5, 5], [4, 4]]) is None


def test_asr_ikcl_returns_arm(scenes):
    s = scenes["open"]
    T = sc.grasp_transforms(s, s.start)[0]
    smp = pl.sample_in_asr(s, None, s.robots[0].model, T, max_samples=200, mode="ikcl",
                           rng=np.random.default_rng(1), t_obj=s.start)
    assert smp is not None and smp.arm is not None and smp.metric >= pl.DEFAULT_THRES


# -- planning -------------------------------------------------------------------


def test_invalid_goal(cm):
    s = empty_scene(obstacles=[{"rect": [3.0, 3.5, 5.0, 4.5], "height": 2.0}])
    res = pl.plan(s, [cm] * 3, request(s))
    assert res.status == pl.INVALID_GOAL and res.path is None


def test_invalid_start(cm):
    s = empty_scene(obstacles=[{"rect": [3.0, 1.5, 5.0, 2.5], "height": 2.0}])
    res = pl.plan(s, [cm] * 3, request(s))
    assert res.status == pl.INVALID_START


def test_bad_request_values():
    s = empty_scene()
    with pytest.raises(ValueError):
        request(s, budget=0)
    with pytest.raises(ValueError):
        request(s, planner="astar")
    with pytest.raises(ValueError):
        request(s, mode="magic")


@pytest.mark.parametrize("planner", pl.PLANNERS)
def test_free_space_object_only(planner):
    s = empty_scene()
    # PRM keeps growing until the cap, so cap iterations rather than wall time
    res = pl.plan(s, None, request(s, planner=planner, mode="none", seed=1, max_iterations=300))
    assert res.success
    w = res.path.waypoints
    assert pl.distance(w[0], s.start.as_vector()) < 1e-12
    assert pl.distance(w[-1], s.goal.as_vector()) < pl.DEFAULT_GOAL_TOL
    gaps = [pl.distance(w[i], w[i + 1]) for i in range(len(w) - 1)]
    assert max(gaps) <= pl.DEFAULT_STEP + 1e-9


def test_free_space_cmcl(cm):
    s = empty_scene()
    res = pl.plan(s, [cm] * 3, request(s, seed=2, max_iterations=300))
    assert res.success
    assert res.path.length >= pl.distance(s.start.as_vector(), s.goal.as_vector()) - 1e-9
    val = pl.Validator(s, [cm] * 3, rng=np.random.default_rng(0), max_samples=1000)
    assert all(val(p) for p in res.path.waypoints)


def test_planning_is_deterministic_with_iteration_cap(scenes, cms_for):
    s = scenes["low_block"]
    out = []
    for _ in range(2):
        res = pl.plan(s, cms_for(s), request(s, seed=5, max_iterations=300))
        out.append(res.to_dict())
    assert out[0] == out[1]
    assert out[0]["status"] == pl.SUCCESS


@pytest.mark.parametrize("mode", ["cmcl", "ikcl"])
def test_budget_is_respected(scenes, cms_for, mode):
    s = scenes["corridor"]
    budget = 1.0
    t0 = time.monotonic()
    res = pl.plan(s, cms_for(s), request(s, budget=budget, mode=mode, seed=0))
    wall = time.monotonic() - t0
    if not res.success:
        assert res.status == pl.TIMEOUT
        assert wall <= 1.05 * budget + 0.05


def test_extra_check_is_applied(cm):
    s = empty_scene()
    # a forbidden band between start and goal leaves no path
    res = pl.plan(s, [cm] * 3, request(s, max_iterations=50),
                  extra_check=lambda p: p.p[1] <= 2.0 or p.p[1] >= 4.0)
    assert res.status == pl.TIMEOUT


# -- post-processing -------------------------------------------------------------------


class FreeValidator:
    def __call__(self, t):
        return True

    def edge(self, a, b, spacing):
        return True


def test_shortcut_shrinks_l_path():
    w = np.array([[0, 0, 0.7, 0, 0, 0], [0, 2, 0.7, 0, 0, 0], [2, 2, 0.7, 0, 0, 0]], dtype=float)
    out = pl.shortcut(w, FreeValidator(), 0.15, np.random.default_rng(0))
    assert len(out) == 2
    assert pl.path_length(out) < pl.path_length(w)
    assert np.array_equal(out[0], w[0]) and np.array_equal(out[-1], w[-1])


def test_postprocess_spacing_and_timing():
    w = np.array([[0, 0, 0.7, 0, 0, 0], [0, 2, 0.7, 0, 0, 0], [2, 2, 0.7, 0, 0, 0]], dtype=float)
    s = empty_scene()
    path = pl.postprocess_path(pl.ObjectPath(w), s, None, mode="none", smooth=False, speed=0.1)
    d = [pl.distance(path.waypoints[i], path.waypoints[i + 1]) for i in range(len(path) - 1)]
    assert max(d) <= pl.DEFAULT_STEP + 1e-9
    assert np.allclose(path.durations * 0.1, d)
    assert path.length == pytest.approx(4.0)
    assert path.total_time == pytest.approx(40.0)


def test_pose_at_interpolates():
    p = pl.ObjectPath([[0, 0, 0, 0, 0, 3.0], [1, 0, 0, 0, 0, -3.0]], [2.0])
    mid = p.pose_at(1.0)
    assert mid[0] == pytest.approx(0.5)
    # yaw goes the short way through pi
    assert abs(mid[5]) == pytest.approx(np.pi, abs=1e-9)
    assert np.array_equal(p.pose_at(-1), p.waypoints[0])
    assert np.array_equal(p.pose_at(5), p.waypoints[-1])


def test_path_dict_round_trip():
    p = pl.ObjectPath([[0, 0, 0, 0, 0, 0], [1, 0, 0, 0, 0, 0]], [3.0])
    q = pl.ObjectPath.from_dict(p.to_dict())
    assert np.array_equal(q.waypoints, p.waypoints) and np.array_equal(q.durations, p.durations)
