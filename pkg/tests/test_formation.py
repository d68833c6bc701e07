import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coopmm import formation as fm
from coopmm import geometry as geo
from coopmm import robot as rb
from coopmm.errors import DegenerateProjection, EmptyList, UncalibratedModel


def test_penalty_known_values():
    assert fm.f_r(0.0) == 1.0
    assert fm.f_r(np.pi) == 0.0
    assert fm.f_r(np.pi / 2) == pytest.approx(0.421875, abs=1e-15)
    assert fm.f_r(-np.pi / 2) == fm.f_r(np.pi / 2)
    # beyond theta_max the penalty stays at zero
    assert fm.f_r(4.0) == 0.0


@given(st.floats(0, np.pi), st.floats(0, np.pi))
def test_penalty_is_monotone_in_range(a, b):
    lo, hi = min(a, b), max(a, b)
    assert 0.0 <= fm.f_r(hi) <= fm.f_r(lo) <= 1.0


def test_penalty_custom_theta_max():
    p = fm.FormationParams(theta_max=np.pi / 2)
    assert fm.f_r(np.pi / 4, p) == pytest.approx(0.421875)
    with pytest.raises(ValueError):
        fm.FormationParams(theta_max=0.0)


# -- manipulability -------------------------------------------------------------------


def two_link(l1, l2):
    joints = (rb.Joint("a", (0.0, 0.0, 0.0), (0.0, 0.0, 0.0), (0, 0, 1), -np.pi, np.pi),
              rb.Joint("b", (l1, 0.0, 0.0), (0.0, 0.0, 0.0), (0, 0, 1), -np.pi, np.pi))
    return rb.RobotModel("two_link", joints, tool_xyz=(l2, 0.0, 0.0))


def test_two_link_closed_form(rng):
    l1, l2 = 0.7, 0.4
    m = two_link(l1, l2)
    for _ in range(50):
        q = rng.uniform(-np.pi, np.pi, 2)
        J = rb.arm_geometric_jacobian(m, q)[:2]
        assert fm.manipulability_of(J) == pytest.approx(l1 * l2 * abs(np.sin(q[1])), abs=1e-9)


def test_manipulability_matches_singular_values(model, rng):
    for _ in range(20):
        q = np.concatenate([rng.uniform(-2, 2, 3), model.random_arm(rng)])
        sv = np.linalg.svd(rb.geometric_jacobian(model, q), compute_uv=False)
        assert fm.manipulability(model, q) == pytest.approx(np.prod(sv), rel=1e-8, abs=1e-12)


def test_batch_agrees_with_single(model, rng):
    qa = model.random_arm(rng, 25)
    batch = fm.manipulability_batch(model, qa)
    for v, a in zip(batch, qa):
        assert v == pytest.approx(fm.manipulability(model, np.concatenate([[1, 2, 0.3], a])), rel=1e-9)


def test_normalized_range(model, rng):
    for _ in range(50):
        q = np.concatenate([[0, 0, 0], model.random_arm(rng)])
        assert 0.0 <= fm.normalized_manipulability(model, q) <= 1.0


def test_outstretched_arm_is_near_singular(model):
    # elbow at -pi/2 lines the forearm up with the upper arm
    q = np.array([0, 0, 0, 0, 0, -np.pi / 2, 0, 0, 0])
    assert fm.normalized_manipulability(model, q) < 1e-9
    assert fm.normalized_manipulability(model, model.dof * [0.0]) > 0.1


def test_uncalibrated_model_raises():
    with pytest.raises(UncalibratedModel):
        fm.normalized_manipulability(two_link(1, 1), np.zeros(5))


def test_calibration_is_a_lower_bound_of_the_true_max(model):
    est = fm.calibrate_omega_max(model, n_samples=2000, seed=3)
    assert 0 < est <= model.omega_max * 1.05


# -- alignment -------------------------------------------------------------------


def test_planar_alignment_examples():
    eb, eo = fm.planar_alignment([0, 0], 0.0, [1, 0], [2, 0])
    assert eb == pytest.approx(0) and eo == pytest.approx(0)
    eb, eo = fm.planar_alignment([0, 0], 0.0, [0, 1], [0, 2])
    assert eb == pytest.approx(np.pi / 2) and eo == pytest.approx(0)
    eb, eo = fm.planar_alignment([0, 0], np.pi, [1, 0], [0, 0])
    assert eb == pytest.approx(np.pi) and eo == pytest.approx(np.pi)
    eb, eo = fm.planar_alignment([0, 0], 0.0, [1, 0], None)
    assert eo == 0.0


def test_degenerate_projection():
    with pytest.raises(DegenerateProjection):
        fm.planar_alignment([1, 1], 0.0, [1, 1], [2, 2])
    with pytest.raises(DegenerateProjection):
        fm.planar_alignment([0, 0], 0.0, [1, 1], [1, 1])


@settings(max_examples=60)
@given(st.floats(-np.pi, np.pi), st.floats(-np.pi, np.pi), st.floats(0.2, 2.0))
def test_alignment_matches_dot_product_oracle(heading, bearing, r):
    ee = r * np.array([np.cos(bearing), np.sin(bearing)])
    eb, _ = fm.planar_alignment([0, 0], heading, ee)
    fwd = np.array([np.cos(heading), np.sin(heading)])
    want = np.arccos(np.clip(fwd @ ee / r, -1, 1))
    assert eb == pytest.approx(want, abs=1e-6)


def test_robot_metric_in_unit_interval(model, rng):
    for _ in range(30):
        q = np.concatenate([rng.uniform(-2, 2, 3), model.random_arm(rng)])
        t = geo.Pose6([rng.uniform(-2, 2), rng.uniform(-2, 2), 0.7], [0, 0, 0])
        try:
            v = fm.formation_metric_robot(model, q, t)
        except DegenerateProjection:
            continue
        assert 0.0 <= v <= 1.0


# -- system metric -------------------------------------------------------------------


def test_system_metric_is_min_and_order_free():
    vals = [0.7, 0.2, 0.9, 0.5]
    assert fm.formation_metric_system(vals) == 0.2
    for perm in itertools.permutations(vals):
        assert fm.formation_metric_system(perm) == 0.2


def test_system_metric_empty():
    with pytest.raises(EmptyList):
        fm.formation_metric_system([])
