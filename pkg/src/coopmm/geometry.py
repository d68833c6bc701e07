"""Pose algebra: roll-pitch-yaw poses, rigid transforms and rate maps.

Orientation convention: ``alpha = (roll, pitch, yaw)`` with
``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``, i.e. extrinsic rotations about the
fixed x, then y, then z axes.  With this convention the angular velocity of
a frame is ``omega = B(alpha) @ alpha_dot`` where ``B`` is returned by
:func:`rpy_rate_matrix`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularRepresentation

TWO_PI = 2.0 * np.pi

# |cos(pitch)| below this makes B(alpha) exactly singular in double precision.
_B_SINGULAR_COS = 1e-12
# Operations that need B^-1 refuse to work this close to pitch = +-pi/2.
GIMBAL_TOL = 1e-6


def wrap_angle(theta):
    """Wrap angle(s) into (-pi, pi].  Values already in range are untouched."""
    if isinstance(theta, float) and -np.pi < theta <= np.pi:
        return theta
    theta = np.asarray(theta, dtype=float)
    if theta.ndim and theta.size and theta.min() > -np.pi and theta.max() <= np.pi:
        return theta.copy()
    inside = (theta > -np.pi) & (theta <= np.pi)
    wrapped = np.pi - np.mod(np.pi - theta, TWO_PI)
    wrapped = np.where(wrapped <= -np.pi, wrapped + TWO_PI, wrapped)
    out = np.where(inside, theta, wrapped)
    if out.ndim == 0:
        return float(out)
    return out


def skew(v):
    """Skew-symmetric matrix S(v) with S(v) @ w = cross(v, w)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rot_z(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rpy_to_matrix(alpha):
    """Rotation matrix for roll-pitch-yaw angles; accepts shape (..., 3)."""
    alpha = np.asarray(alpha, dtype=float)
    r, p, y = alpha[..., 0], alpha[..., 1], alpha[..., 2]
    cr, sr = np.cos(r), np.sin(r)
    cp, sp = np.cos(p), np.sin(p)
    cy, sy = np.cos(y), np.sin(y)
    R = np.empty(alpha.shape[:-1] + (3, 3))
    R[..., 0, 0] = cy * cp
    R[..., 0, 1] = cy * sp * sr - sy * cr
    R[..., 0, 2] = cy * sp * cr + sy * sr
    R[..., 1, 0] = sy * cp
    R[..., 1, 1] = sy * sp * sr + cy * cr
    R[..., 1, 2] = sy * sp * cr - cy * sr
    R[..., 2, 0] = -sp
    R[..., 2, 1] = cp * sr
    R[..., 2, 2] = cp * cr
    return R


def matrix_to_rpy(R):
    """Roll-pitch-yaw angles of rotation matrix/matrices, shape (..., 3, 3).

    At gimbal lock (pitch = +-pi/2) roll is set to 0 and the whole rotation
    about z is assigned to yaw.
    """
    R = np.asarray(R, dtype=float)
    sp = np.clip(-R[..., 2, 0], -1.0, 1.0)
    pitch = np.arcsin(sp)
    cp = np.hypot(R[..., 0, 0], R[..., 1, 0])
    regular = cp > 1e-12
    roll = np.where(regular, np.arctan2(R[..., 2, 1], R[..., 2, 2]), 0.0)
    yaw = np.where(
        regular,
        np.arctan2(R[..., 1, 0], R[..., 0, 0]),
        np.arctan2(-R[..., 0, 1], R[..., 1, 1]),
    )
    out = np.stack([roll, pitch, yaw], axis=-1)
    return wrap_angle(out)


def rpy_rate_matrix(alpha):
    """Map from roll-pitch-yaw rates to angular velocity, ``omega = B @ alpha_dot``.

    Raises SingularRepresentation only when B is exactly singular; near gimbal
    lock the (ill-conditioned) matrix is still returned.
    """
    _, pitch, yaw = alpha
    cpsi, spsi = np.cos(pitch), np.sin(pitch)
    cth, sth = np.cos(yaw), np.sin(yaw)
    if abs(cpsi) < _B_SINGULAR_COS:
        raise SingularRepresentation(f"pitch {pitch!r} is at gimbal lock")
    return np.array(
        [
            [cpsi * cth, -sth, 0.0],
            [cpsi * sth, cth, 0.0],
            [-spsi, 0.0, 1.0],
        ]
    )


def rpy_rate_matrix_inv(alpha):
    """Inverse of :func:`rpy_rate_matrix`; refuses within GIMBAL_TOL of lock."""
    _, pitch, yaw = alpha
    if abs(abs(wrap_angle(pitch)) - np.pi / 2) < GIMBAL_TOL:
        raise SingularRepresentation(f"pitch {pitch!r} within {GIMBAL_TOL} of +-pi/2")
    cpsi, spsi = np.cos(pitch), np.sin(pitch)
    cth, sth = np.cos(yaw), np.sin(yaw)
    tpsi = spsi / cpsi
    return np.array(
        [
            [cth / cpsi, sth / cpsi, 0.0],
            [-sth, cth, 0.0],
            [cth * tpsi, sth * tpsi, 1.0],
        ]
    )


def rotation_error(R_target, R_current):
    """Rotation vector ``v`` (world frame) with ``exp(S(v)) @ R_current = R_target``."""
    R_err = R_target @ R_current.T
    return _log_so3(R_err)


def _log_so3(R):
    cos_angle = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(cos_angle)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if angle < 1e-8:
        return 0.5 * w
    if np.pi - angle < 1e-6:
        # axis from the symmetric part near a half-turn
        M = (R + np.eye(3)) / 2.0
        k = int(np.argmax(np.diag(M)))
        axis = M[:, k] / np.sqrt(max(M[k, k], 1e-300))
        if w @ axis < 0:
            axis = -axis
        return angle * axis / np.linalg.norm(axis)
    return angle / (2.0 * np.sin(angle)) * w


def angle_between_rotations(Ra, Rb):
    """Geodesic angle between two rotation matrices."""
    c = np.clip((np.trace(Ra.T @ Rb) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.arccos(c))


@dataclass(frozen=True, eq=False)
class Pose6:
    """Position (m) plus roll-pitch-yaw (rad); angles are stored wrapped."""

    p: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=float).reshape(3)
        a = np.asarray(wrap_angle(np.array(self.alpha, dtype=float).reshape(3)))
        p.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "alpha", a)

    @classmethod
    def from_vector(cls, v) -> Pose6:
        v = np.asarray(v, dtype=float)
        return cls(v[:3], v[3:6])

    @classmethod
    def identity(cls) -> Pose6:
        return cls(np.zeros(3), np.zeros(3))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.p, self.alpha])

    def to_transform(self) -> Transform:
        return to_transform(self)

    def __eq__(self, other):
        if not isinstance(other, Pose6):
            return NotImplemented
        return bool(np.array_equal(self.p, other.p) and np.array_equal(self.alpha, other.alpha))

    def __repr__(self):
        return f"Pose6(p={self.p.tolist()}, alpha={self.alpha.tolist()})"


@dataclass(frozen=True, eq=False)
class Transform:
    """Rigid transform ``x -> R @ x + p``."""

    R: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", np.array(self.R, dtype=float).reshape(3, 3))
        object.__setattr__(self, "p", np.array(self.p, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> Transform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M) -> Transform:
        M = np.asarray(M, dtype=float)
        return cls(M[:3, :3], M[:3, 3])

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.p
        return M

    def apply(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.R.T + self.p

    def __matmul__(self, other: Transform) -> Transform:
        return compose(self, other)

    def is_valid(self, tol=1e-9) -> bool:
        return bool(
            np.allclose(self.R @ self.R.T, np.eye(3), atol=tol)
            and abs(np.linalg.det(self.R) - 1.0) < tol
        )


def compose(a: Transform, b: Transform) -> Transform:
    return Transform(a.R @ b.R, a.R @ b.p + a.p)


def invert(t: Transform) -> Transform:
    Rt = t.R.T
    return Transform(Rt, -Rt @ t.p)


def to_transform(pose: Pose6) -> Transform:
    return Transform(rpy_to_matrix(pose.alpha), pose.p)


def to_pose(t: Transform) -> Pose6:
    return Pose6(t.p, matrix_to_rpy(t.R))


def pose_difference(a, b):
    """Componentwise ``a - b`` of two pose 6-vectors with the angles wrapped."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    d[..., 3:6] = wrap_angle(d[..., 3:6])
    return d
