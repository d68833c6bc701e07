"""Formation quality: manipulability, alignment angles and the combined metric.

Per robot the metric is ``mu * f_r(theta_eb) * f_r(theta_eo)`` where ``mu`` is
manipulability normalised by the model's calibrated maximum, ``theta_eb`` is the
bearing of the end effector seen from the base, and ``theta_eo`` measures how far
the base -> end effector ray is from pointing at the object centre.  The system
metric is the minimum over robots.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import robot as rb
from .errors import DegenerateProjection, EmptyList, UncalibratedModel

DEGENERATE_TOL = 1e-9


@dataclass(frozen=True)
class FormationParams:
    theta_max: float = np.pi

    def __post_init__(self):
        if not self.theta_max > 0:
            raise ValueError("theta_max must be positive")


DEFAULT_PARAMS = FormationParams()


def f_r(theta, params: FormationParams = DEFAULT_PARAMS):
    """Penalty ``(1 - u^2)^3`` with ``u = min(|theta| / theta_max, 1)``."""
    u = np.minimum(np.abs(np.asarray(theta, dtype=float)) / params.theta_max, 1.0)
    out = (1.0 - u * u) ** 3
    if out.ndim == 0:
        return float(out)
    return out


def manipulability_of(J) -> float:
    """Yoshikawa measure ``sqrt(det(J J^T))`` of an arbitrary matrix.

    Computed as the product of singular values, which keeps full precision
    near singular configurations where the determinant cancels.
    """
    J = np.asarray(J, dtype=float)
    return float(_sv_product(J))


def _sv_product(J):
    m, n = J.shape[-2:]
    if m > n:
        return np.zeros(J.shape[:-2])
    return np.linalg.svd(J, compute_uv=False).prod(axis=-1)


def manipulability(model: rb.RobotModel, q, kind="geometric") -> float:
    """Manipulability of the whole mobile manipulator.

    ``kind="geometric"`` (default) uses the twist Jacobian, which is independent
    of the orientation parametrisation; ``"analytical"`` uses the roll-pitch-yaw
    rate Jacobian and raises SingularRepresentation at gimbal lock.
    """
    if kind == "geometric":
        J = rb.geometric_jacobian(model, q)
    elif kind == "analytical":
        J = rb.jacobian(model, q)
    else:
        raise ValueError(f"unknown Jacobian kind {kind!r}")
    return manipulability_of(J)


def manipulability_batch(model: rb.RobotModel, qa) -> np.ndarray:
    """Geometric manipulability for many arm configurations (N, n).

    The base pose does not change the measure, so only arm joints are needed.
    """
    qa = np.atleast_2d(qa)
    _, p, o, z = rb._arm_chain(model, qa)
    N, n = qa.shape
    J = np.zeros((N, 6, 3 + n))
    J[:, 0, 0] = 1.0
    J[:, 1, 1] = 1.0
    J[:, 0, 2] = -p[:, 1]
    J[:, 1, 2] = p[:, 0]
    J[:, 5, 2] = 1.0
    J[:, :3, 3:] = np.cross(z, p[:, None, :] - o).transpose(0, 2, 1)
    J[:, 3:, 3:] = z.transpose(0, 2, 1)
    return _sv_product(J)


def normalized_manipulability(model: rb.RobotModel, q) -> float:
    if model.omega_max is None or not model.omega_max > 0:
        raise UncalibratedModel(f"model {model.name!r} has no omega_max")
    return min(manipulability(model, q) / model.omega_max, 1.0)


def normalized_manipulability_batch(model: rb.RobotModel, qa) -> np.ndarray:
    if model.omega_max is None or not model.omega_max > 0:
        raise UncalibratedModel(f"model {model.name!r} has no omega_max")
    return np.minimum(manipulability_batch(model, qa) / model.omega_max, 1.0)


def calibrate_omega_max(model: rb.RobotModel, n_samples=100_000, seed=0, chunk=10_000) -> float:
    """Largest manipulability over uniformly random arm configurations."""
    rng = np.random.default_rng(seed)
    best = 0.0
    remaining = n_samples
    while remaining > 0:
        k = min(chunk, remaining)
        best = max(best, float(manipulability_batch(model, model.random_arm(rng, k)).max()))
        remaining -= k
    return best


def _angle_between(u, v):
    cross = u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]
    dot = u[..., 0] * v[..., 0] + u[..., 1] * v[..., 1]
    return np.abs(np.arctan2(cross, dot))


def planar_alignment(base_xy, heading, ee_xy, obj_xy=None):
    """Alignment angles from ground-plane points (vectorised over leading axes).

    ``obj_xy=None`` means the object direction is ideal (theta_eo = 0).
    """
    base_xy = np.asarray(base_xy, dtype=float)
    ee_xy = np.asarray(ee_xy, dtype=float)
    heading = np.asarray(heading, dtype=float)
    be = ee_xy - base_xy
    if np.any(np.hypot(be[..., 0], be[..., 1]) < DEGENERATE_TOL):
        raise DegenerateProjection("end effector projects onto the base origin")
    fwd = np.stack([np.cos(heading), np.sin(heading)], axis=-1)
    theta_eb = _angle_between(fwd, be)
    if obj_xy is None:
        theta_eo = np.zeros_like(theta_eb)
    else:
        eo = np.asarray(obj_xy, dtype=float) - ee_xy
        if np.any(np.hypot(eo[..., 0], eo[..., 1]) < DEGENERATE_TOL):
            raise DegenerateProjection("end effector projects onto the object centre")
        theta_eo = _angle_between(be, eo)
    return theta_eb, theta_eo


def alignment_angles(model: rb.RobotModel, q, t_obj=None):
    """(theta_eb, theta_eo) in [0, pi] for a configuration and object pose."""
    qv = rb._as_qvec(q)
    _, p = rb.ee_transform(model, qv)
    obj_xy = None if t_obj is None else np.asarray(t_obj.p)[:2]
    eb, eo = planar_alignment(qv[:2], qv[2], p[:2], obj_xy)
    return float(eb), float(eo)


def formation_metric_robot(model: rb.RobotModel, q, t_obj=None,
                           params: FormationParams = DEFAULT_PARAMS) -> float:
    """Per-robot metric ``mu * f_r(theta_eb) * f_r(theta_eo)`` in [0, 1]."""
    mu = normalized_manipulability(model, q)
    eb, eo = alignment_angles(model, q, t_obj)
    return mu * f_r(eb, params) * f_r(eo, params)


def formation_metric_system(values) -> float:
    values = list(values)
    if not values:
        raise EmptyList("formation_metric_system needs at least one value")
    return min(values)
