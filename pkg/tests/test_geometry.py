import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coopmm import geometry as geo
from coopmm.errors import SingularRepresentation

angles = st.floats(-20.0, 20.0, allow_nan=False)
safe_pitch = st.floats(-1.4, 1.4, allow_nan=False)
coords = st.floats(-5.0, 5.0, allow_nan=False)


def hom(R, p):
    M = np.eye(4)
    M[:3, :3] = R
    M[:3, 3] = p
    return M


def random_transform(rng):
    a = rng.uniform([-np.pi, -1.4, -np.pi], [np.pi, 1.4, np.pi])
    return geo.Transform(geo.rpy_to_matrix(a), rng.uniform(-3, 3, 3))


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


# -- angles -------------------------------------------------------------------


@given(angles)
def test_wrap_is_idempotent_and_in_range(theta):
    w = geo.wrap_angle(theta)
    assert -np.pi < w <= np.pi
    assert geo.wrap_angle(w) == w
    assert np.isclose(np.cos(w), np.cos(theta), atol=1e-9)
    assert np.isclose(np.sin(w), np.sin(theta), atol=1e-9)


def test_wrap_boundary():
    assert geo.wrap_angle(np.pi) == np.pi
    assert geo.wrap_angle(-np.pi) == pytest.approx(np.pi)


@given(st.floats(-np.pi, np.pi), safe_pitch, st.floats(-np.pi, np.pi))
def test_rpy_is_extrinsic_xyz(r, p, y):
    # roll about x first, then pitch about y, then yaw about z (fixed axes)
    R = rot_y(p) @ rot_x(r)
    R = geo.rot_z(y) @ R
    assert np.allclose(geo.rpy_to_matrix([r, p, y]), R, atol=1e-12)


@given(st.floats(-3.1, 3.1), safe_pitch, st.floats(-3.1, 3.1), coords, coords, coords)
def test_pose_transform_round_trip(r, p, y, x1, x2, x3):
    pose = geo.Pose6([x1, x2, x3], [r, p, y])
    back = geo.to_pose(geo.to_transform(pose))
    assert np.array_equal(back.p, pose.p)
    assert np.allclose(geo.pose_difference(back.as_vector(), pose.as_vector()), 0.0, atol=1e-9)


def test_pose_angles_are_wrapped():
    pose = geo.Pose6([0, 0, 0], [4.0, -4.0, 7.0])
    assert np.all(pose.alpha > -np.pi) and np.all(pose.alpha <= np.pi)


# -- transforms -------------------------------------------------------------------


def test_invert_identity():
    I = geo.invert(geo.Transform.identity())
    assert np.array_equal(I.R, np.eye(3)) and np.array_equal(I.p, np.zeros(3))


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_group_laws(seed):
    rng = np.random.default_rng(seed)
    T = random_transform(rng)
    assert T.is_valid()
    E = geo.compose(T, geo.invert(T))
    assert np.allclose(E.R, np.eye(3), atol=1e-9) and np.allclose(E.p, 0, atol=1e-9)
    A, B, C = (random_transform(rng) for _ in range(3))
    lhs = geo.compose(geo.compose(A, B), C)
    rhs = geo.compose(A, geo.compose(B, C))
    assert np.allclose(lhs.matrix(), rhs.matrix(), atol=1e-9)


def test_relative_transform_matches_homogeneous_oracle(rng):
    for _ in range(50):
        Xb, Xe = random_transform(rng), random_transform(rng)
        got = geo.compose(geo.invert(Xb), Xe).matrix()
        want = np.linalg.inv(hom(Xb.R, Xb.p)) @ hom(Xe.R, Xe.p)
        assert np.allclose(got, want, atol=1e-9)


# -- rpy rate matrix -------------------------------------------------------------------


def test_rate_matrix_identity_at_zero():
    assert np.array_equal(geo.rpy_rate_matrix([0.0, 0.0, 0.0]), np.eye(3))


def test_rate_matrix_near_gimbal_lock_is_ill_conditioned():
    B = geo.rpy_rate_matrix([0.0, np.pi / 2 - 1e-9, 0.0])
    assert np.linalg.cond(B) > 1e6


def test_rate_matrix_inverse_raises_at_gimbal_lock():
    with pytest.raises(SingularRepresentation):
        geo.rpy_rate_matrix_inv([0.0, np.pi / 2, 0.3])
    with pytest.raises(SingularRepresentation):
        geo.rpy_rate_matrix([0.0, np.pi / 2, 0.0])


def test_rate_matrix_matches_finite_difference_angular_velocity(rng):
    h = 1e-6
    for _ in range(50):
        a = rng.uniform([-np.pi, -1.3, -np.pi], [np.pi, 1.3, np.pi])
        ad = rng.normal(size=3)
        Rp = geo.rpy_to_matrix(a + h * ad)
        Rm = geo.rpy_to_matrix(a - h * ad)
        Rdot = (Rp - Rm) / (2 * h)
        W = Rdot @ geo.rpy_to_matrix(a).T
        omega = np.array([W[2, 1], W[0, 2], W[1, 0]])
        assert np.allclose(geo.rpy_rate_matrix(a) @ ad, omega, atol=1e-5)


@given(st.floats(-3.1, 3.1), safe_pitch, st.floats(-3.1, 3.1))
def test_rate_matrix_inverse(r, p, y):
    a = [r, p, y]
    assert np.allclose(geo.rpy_rate_matrix_inv(a) @ geo.rpy_rate_matrix(a), np.eye(3), atol=1e-9)


def test_skew_matches_cross(rng):
    v, w = rng.normal(size=3), rng.normal(size=3)
    assert np.allclose(geo.skew(v) @ w, np.cross(v, w))
