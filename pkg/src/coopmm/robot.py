"""Mobile manipulator models: planar holonomic base plus a serial arm.

A model is a chain ``base(x, y, theta) -> mount -> joint_1 ... joint_n -> tool``.
Each arm joint applies a fixed offset (translation ``xyz`` then rotation
``rpy``) followed by a rotation of ``q_j`` about its unit ``axis``.  The base
frame sits on the ground under the robot centre.

Configuration vectors are laid out ``[x, y, theta, q_1, ..., q_n]``; Jacobian
columns follow the same order.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import geometry as geo
from .errors import ParseError, SingularRepresentation, Unreachable, VersionMismatch

MODEL_FORMAT_VERSION = 1

IK_DAMPING = 1e-3
IK_STEP_CAP = 0.2
IK_MAX_ITER = 200
IK_RESTARTS = 8
IK_TOL_POS = 1e-4
IK_TOL_ROT = 1e-3
# a descent that has not reduced its error for this many steps is abandoned
IK_STALL_ITERS = 20

POINTS_PER_LINK = 5


@dataclass(frozen=True)
class BaseConfig:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", geo.wrap_angle(float(self.theta)))

    def as_vector(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @classmethod
    def from_vector(cls, v) -> BaseConfig:
        return cls(v[0], v[1], v[2])

    def transform(self) -> geo.Transform:
        return geo.Transform(geo.rot_z(self.theta), [self.x, self.y, 0.0])


@dataclass(frozen=True, eq=False)
class ArmConfig:
    joints: np.ndarray

    def __post_init__(self):
        j = np.array(self.joints, dtype=float).reshape(-1)
        j.setflags(write=False)
        object.__setattr__(self, "joints", j)

    def __len__(self):
        return len(self.joints)

    def __eq__(self, other):
        if not isinstance(other, ArmConfig):
            return NotImplemented
        return bool(np.array_equal(self.joints, other.joints))


@dataclass(frozen=True, eq=False)
class MMConfig:
    base: BaseConfig
    arm: ArmConfig

    @property
    def dim(self) -> int:
        return 3 + len(self.arm)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.base.as_vector(), self.arm.joints])

    @classmethod
    def from_vector(cls, v) -> MMConfig:
        v = np.asarray(v, dtype=float)
        return cls(BaseConfig.from_vector(v[:3]), ArmConfig(v[3:]))


@dataclass(frozen=True)
class Joint:
    name: str
    xyz: tuple
    rpy: tuple
    axis: tuple
    lower: float
    upper: float


@dataclass(frozen=True)
class RobotModel:
    """Kinematic and footprint description of one mobile manipulator."""

    name: str
    joints: tuple
    mount_xyz: tuple = (0.0, 0.0, 0.0)
    mount_rpy: tuple = (0.0, 0.0, 0.0)
    tool_xyz: tuple = (0.0, 0.0, 0.0)
    tool_rpy: tuple = (0.0, 0.0, 0.0)
    footprint_radius: float = 0.3
    base_height: float = 0.4
    v_max: float = 0.1
    omega_max: float | None = None
    home: tuple | None = None
    format_version: int = MODEL_FORMAT_VERSION
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def n_arm(self) -> int:
        return len(self.joints)

    @property
    def dof(self) -> int:
        return 3 + self.n_arm

    @cached_property
    def _chain(self):
        n = self.n_arm
        off_R = np.stack([geo.rpy_to_matrix(j.rpy) for j in self.joints]) if n else np.zeros((0, 3, 3))
        off_p = np.array([j.xyz for j in self.joints], dtype=float).reshape(n, 3)
        axes = np.array([j.axis for j in self.joints], dtype=float).reshape(n, 3)
        axes /= np.linalg.norm(axes, axis=1, keepdims=True)
        K = np.stack([geo.skew(a) for a in axes]) if n else np.zeros((0, 3, 3))
        K2 = K @ K
        mount_R = geo.rpy_to_matrix(self.mount_rpy)
        mount_p = np.array(self.mount_xyz, dtype=float)
        tool_R = geo.rpy_to_matrix(self.tool_rpy)
        tool_p = np.array(self.tool_xyz, dtype=float)
        return dict(
            off_R=off_R, off_p=off_p, axes=axes, K=K, K2=K2,
            mount_R=mount_R, mount_p=mount_p, tool_R=tool_R, tool_p=tool_p,
        )

    @cached_property
    def _scalar(self):
        return _ScalarChain(self)

    @cached_property
    def limits(self) -> np.ndarray:
        return np.array([[j.lower, j.upper] for j in self.joints], dtype=float)

    @cached_property
    def home_config(self) -> np.ndarray:
        if self.home is not None:
            return np.array(self.home, dtype=float)
        return np.clip(np.zeros(self.n_arm), self.limits[:, 0], self.limits[:, 1])

    @cached_property
    def reach_center(self) -> np.ndarray:
        """First joint origin in the base frame (lies on the first joint axis)."""
        c = self._chain
        return c["mount_p"] + c["mount_R"] @ c["off_p"][0]

    @cached_property
    def reach(self) -> float:
        """Upper bound on the distance from :attr:`reach_center` to the tool point."""
        c = self._chain
        return float(np.linalg.norm(c["off_p"][1:], axis=1).sum() + np.linalg.norm(c["tool_p"]))

    @cached_property
    def horizontal_reach(self) -> float:
        """Upper bound on the ground-plane distance from base origin to the tool."""
        return float(np.hypot(*self.reach_center[:2]) + self.reach)

    @cached_property
    def standoff(self) -> float:
        """Ground-plane distance from base origin to the tool at the home config."""
        _, p = arm_fk(self, self.home_config)
        return float(np.hypot(p[0], p[1]))

    @cached_property
    def zero_pose_position(self) -> np.ndarray:
        """Tool position (base frame) at q = 0 when every offset rotation is identity."""
        c = self._chain
        return c["mount_p"] + c["off_p"].sum(axis=0) + c["tool_p"]

    def with_omega_max(self, omega_max: float) -> RobotModel:
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d["omega_max"] = float(omega_max)
        return RobotModel(**d)

    def within_limits(self, qa, tol=0.0) -> bool:
        qa = np.asarray(qa)
        return bool(np.all(qa >= self.limits[:, 0] - tol) and np.all(qa <= self.limits[:, 1] + tol))

    def random_arm(self, rng, size=None) -> np.ndarray:
        lo, hi = self.limits[:, 0], self.limits[:, 1]
        if size is None:
            return rng.uniform(lo, hi)
        return rng.uniform(lo, hi, size=(size, self.n_arm))


# ----------------------------------------------------------------------------
# model files


def model_to_dict(model: RobotModel) -> dict:
    d = {
        "format_version": model.format_version,
        "name": model.name,
        "base": {
            "footprint_radius": model.footprint_radius,
            "height": model.base_height,
            "v_max": model.v_max,
        },
        "mount": {"xyz": list(model.mount_xyz), "rpy": list(model.mount_rpy)},
        "joints": [
            {
                "name": j.name,
                "xyz": list(j.xyz),
                "rpy": list(j.rpy),
                "axis": list(j.axis),
                "limits": [j.lower, j.upper],
            }
            for j in model.joints
        ],
        "tool": {"xyz": list(model.tool_xyz), "rpy": list(model.tool_rpy)},
    }
    if model.home is not None:
        d["home"] = list(model.home)
    if model.omega_max is not None:
        d["omega_max"] = model.omega_max
    d.update(model.extra)
    return d


def _vec3(obj, key, where):
    try:
        v = tuple(float(x) for x in obj.get(key, (0.0, 0.0, 0.0)))
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{key} must be three numbers", field=f"{where}.{key}") from exc
    if len(v) != 3:
        raise ParseError(f"{key} must have three entries", field=f"{where}.{key}")
    return v


def model_from_dict(d: dict) -> RobotModel:
    version = d.get("format_version")
    if version is None:
        raise ParseError("missing format_version", field="format_version")
    if version != MODEL_FORMAT_VERSION:
        raise VersionMismatch(f"model format_version {version}, expected {MODEL_FORMAT_VERSION}")
    joints = []
    for i, jd in enumerate(d.get("joints", [])):
        where = f"joints[{i}]"
        lim = jd.get("limits", [-np.pi, np.pi])
        if len(lim) != 2 or lim[0] >= lim[1]:
            raise ParseError("limits must be [lower, upper] with lower < upper", field=f"{where}.limits")
        axis = _vec3(jd, "axis", where)
        if np.linalg.norm(axis) == 0:
            raise ParseError("axis must be nonzero", field=f"{where}.axis")
        joints.append(
            Joint(
                name=str(jd.get("name", f"j{i + 1}")),
                xyz=_vec3(jd, "xyz", where),
                rpy=_vec3(jd, "rpy", where),
                axis=axis,
                lower=float(lim[0]),
                upper=float(lim[1]),
            )
        )
    if not joints:
        raise ParseError("model needs at least one arm joint", field="joints")
    base = d.get("base", {})
    radius = float(base.get("footprint_radius", 0.3))
    if radius <= 0:
        raise ParseError("footprint_radius must be positive", field="base.footprint_radius")
    known = {"format_version", "name", "base", "mount", "joints", "tool", "home", "omega_max"}
    home = d.get("home")
    if home is not None and len(home) != len(joints):
        raise ParseError("home must have one entry per joint", field="home")
    return RobotModel(
        name=str(d.get("name", "robot")),
        joints=tuple(joints),
        mount_xyz=_vec3(d.get("mount", {}), "xyz", "mount"),
        mount_rpy=_vec3(d.get("mount", {}), "rpy", "mount"),
        tool_xyz=_vec3(d.get("tool", {}), "xyz", "tool"),
        tool_rpy=_vec3(d.get("tool", {}), "rpy", "tool"),
        footprint_radius=radius,
        base_height=float(base.get("height", 0.4)),
        v_max=float(base.get("v_max", 0.1)),
        omega_max=None if d.get("omega_max") is None else float(d["omega_max"]),
        home=None if home is None else tuple(float(x) for x in home),
        extra={k: v for k, v in d.items() if k not in known},
    )


def load_model(path) -> RobotModel:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON in {path}: {exc.msg}", line=exc.lineno) from exc
    return model_from_dict(d)


def save_model(model: RobotModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n")


# ----------------------------------------------------------------------------
# kinematics


def _arm_chain(model: RobotModel, qa):
    """Batched arm chain in the base frame.

    Returns tool rotation (N,3,3), tool position (N,3), joint origins (N,n,3),
    joint axes (N,n,3).
    """
    c = model._chain
    qa = np.atleast_2d(np.asarray(qa, dtype=float))
    N, n = qa.shape
    # rotations are kept flattened as (N*3, 3) so products with constant
    # matrices become single 2-D BLAS calls
    R = np.tile(c["mount_R"], (N, 1))
    p = np.broadcast_to(c["mount_p"], (N, 3))
    origins = np.empty((N, n, 3))
    axes = np.empty((N, n, 3))
    s = np.repeat(np.sin(qa), 3, axis=0)
    cm = np.repeat(1.0 - np.cos(qa), 3, axis=0)
    for j in range(n):
        p = p + (R @ c["off_p"][j]).reshape(N, 3)
        R = R @ c["off_R"][j]
        origins[:, j] = p
        axes[:, j] = (R @ c["axes"][j]).reshape(N, 3)
        RK = R @ c["K"][j]
        R = R + s[:, j, None] * RK + cm[:, j, None] * (RK @ c["K"][j])
    p = p + (R @ c["tool_p"]).reshape(N, 3)
    R = (R @ c["tool_R"]).reshape(N, 3, 3)
    return R, p, origins, axes


def _mat(R):
    return [float(v) for v in np.asarray(R, dtype=float).ravel()]


def _mul(A, B):
    a0, a1, a2, a3, a4, a5, a6, a7, a8 = A
    b0, b1, b2, b3, b4, b5, b6, b7, b8 = B
    return [a0 * b0 + a1 * b3 + a2 * b6, a0 * b1 + a1 * b4 + a2 * b7, a0 * b2 + a1 * b5 + a2 * b8,
            a3 * b0 + a4 * b3 + a5 * b6, a3 * b1 + a4 * b4 + a5 * b7, a3 * b2 + a4 * b5 + a5 * b8,
            a6 * b0 + a7 * b3 + a8 * b6, a6 * b1 + a7 * b4 + a8 * b7, a6 * b2 + a7 * b5 + a8 * b8]


def _mulv(A, v):
    return [A[0] * v[0] + A[1] * v[1] + A[2] * v[2],
            A[3] * v[0] + A[4] * v[1] + A[5] * v[2],
            A[6] * v[0] + A[7] * v[1] + A[8] * v[2]]


class _ScalarChain:
    """Single-configuration arm chain on Python floats.

    For one configuration the per-call overhead of small numpy operations
    dominates, so IK descents use this path.  Joint axes along a coordinate
    axis and identity joint offsets get shortcut updates.
    """

    def __init__(self, model: RobotModel):
        c = model._chain
        eye = np.eye(3)
        self.mount_R = _mat(c["mount_R"])
        self.mount_p = [float(v) for v in c["mount_p"]]
        self.tool_R = None if np.allclose(c["tool_R"], eye, atol=0) else _mat(c["tool_R"])
        self.tool_p = [float(v) for v in c["tool_p"]]
        self.joints = []
        for j in range(model.n_arm):
            off_R = None if np.allclose(c["off_R"][j], eye, atol=0) else _mat(c["off_R"][j])
            a = c["axes"][j]
            k = int(np.argmax(np.abs(a)))
            coord = (k, float(np.sign(a[k]))) if abs(abs(a[k]) - 1.0) < 1e-15 else None
            self.joints.append((off_R, [float(v) for v in c["off_p"][j]],
                                [float(v) for v in a], coord))

    def __call__(self, qa):
        """Tool (R as a row-major 9-list, p) plus joint origins and world axes."""
        R = self.mount_R
        px, py, pz = self.mount_p
        origins, axes = [], []
        for (off_R, off_p, a, coord), q in zip(self.joints, qa):
            ox, oy, oz = off_p
            px += R[0] * ox + R[1] * oy + R[2] * oz
            py += R[3] * ox + R[4] * oy + R[5] * oz
            pz += R[6] * ox + R[7] * oy + R[8] * oz
            if off_R is not None:
                R = _mul(R, off_R)
            origins.append((px, py, pz))
            c, s = math.cos(q), math.sin(q)
            if coord is not None:
                k, sg = coord
                s *= sg
                if k == 0:
                    axes.append((sg * R[0], sg * R[3], sg * R[6]))
                    R = [R[0], c * R[1] + s * R[2], -s * R[1] + c * R[2],
                         R[3], c * R[4] + s * R[5], -s * R[4] + c * R[5],
                         R[6], c * R[7] + s * R[8], -s * R[7] + c * R[8]]
                elif k == 1:
                    axes.append((sg * R[1], sg * R[4], sg * R[7]))
                    R = [c * R[0] - s * R[2], R[1], s * R[0] + c * R[2],
                         c * R[3] - s * R[5], R[4], s * R[3] + c * R[5],
                         c * R[6] - s * R[8], R[7], s * R[6] + c * R[8]]
                else:
                    axes.append((sg * R[2], sg * R[5], sg * R[8]))
                    R = [c * R[0] + s * R[1], -s * R[0] + c * R[1], R[2],
                         c * R[3] + s * R[4], -s * R[3] + c * R[4], R[5],
                         c * R[6] + s * R[7], -s * R[6] + c * R[7], R[8]]
            else:
                axes.append(tuple(_mulv(R, a)))
                x, y, z = a
                v = 1.0 - c
                rot = [c + x * x * v, x * y * v - z * s, x * z * v + y * s,
                       y * x * v + z * s, c + y * y * v, y * z * v - x * s,
                       z * x * v - y * s, z * y * v + x * s, c + z * z * v]
                R = _mul(R, rot)
        tx, ty, tz = self.tool_p
        px += R[0] * tx + R[1] * ty + R[2] * tz
        py += R[3] * tx + R[4] * ty + R[5] * tz
        pz += R[6] * tx + R[7] * ty + R[8] * tz
        if self.tool_R is not None:
            R = _mul(R, self.tool_R)
        return R, (px, py, pz), origins, axes


def _rot_err(Rt, Rc):
    """Rotation vector taking Rc to Rt (world frame), on 9-lists."""
    # E = Rt @ Rc.T
    e0 = Rt[0] * Rc[0] + Rt[1] * Rc[1] + Rt[2] * Rc[2]
    e1 = Rt[0] * Rc[3] + Rt[1] * Rc[4] + Rt[2] * Rc[5]
    e2 = Rt[0] * Rc[6] + Rt[1] * Rc[7] + Rt[2] * Rc[8]
    e3 = Rt[3] * Rc[0] + Rt[4] * Rc[1] + Rt[5] * Rc[2]
    e4 = Rt[3] * Rc[3] + Rt[4] * Rc[4] + Rt[5] * Rc[5]
    e5 = Rt[3] * Rc[6] + Rt[4] * Rc[7] + Rt[5] * Rc[8]
    e6 = Rt[6] * Rc[0] + Rt[7] * Rc[1] + Rt[8] * Rc[2]
    e7 = Rt[6] * Rc[3] + Rt[7] * Rc[4] + Rt[8] * Rc[5]
    e8 = Rt[6] * Rc[6] + Rt[7] * Rc[7] + Rt[8] * Rc[8]
    cos_a = min(1.0, max(-1.0, (e0 + e4 + e8 - 1.0) / 2.0))
    angle = math.acos(cos_a)
    if math.pi - angle < 1e-6:
        return geo._log_so3(np.array([e0, e1, e2, e3, e4, e5, e6, e7, e8]).reshape(3, 3)).tolist()
    w = (e7 - e5, e2 - e6, e3 - e1)
    f = 0.5 if angle < 1e-8 else angle / (2.0 * math.sin(angle))
    return [f * w[0], f * w[1], f * w[2]]


def arm_fk(model: RobotModel, qa):
    """Tool (R, p) in the base frame for one arm configuration."""
    R, p, _, _ = _arm_chain(model, qa)
    return R[0], p[0]


def arm_fk_batch(model: RobotModel, qa):
    R, p, _, _ = _arm_chain(model, qa)
    return R, p


def arm_geometric_jacobian(model: RobotModel, qa):
    """6 x n geometric Jacobian of the arm alone, base frame, tool point."""
    R, p, o, z = _arm_chain(model, qa)
    J = np.empty((6, model.n_arm))
    J[:3] = np.cross(z[0], p[0] - o[0]).T
    J[3:] = z[0].T
    return J


def _as_qvec(q):
    if isinstance(q, MMConfig):
        return q.as_vector()
    return np.asarray(q, dtype=float)


def ee_transform(model: RobotModel, q):
    """World-frame tool (R, p) for a full configuration vector or MMConfig."""
    q = _as_qvec(q)
    Rb, pb = arm_fk(model, q[3:])
    Rz = geo.rot_z(q[2])
    return Rz @ Rb, Rz @ pb + np.array([q[0], q[1], 0.0])


def forward_kinematics(model: RobotModel, q) -> geo.Pose6:
    R, p = ee_transform(model, q)
    return geo.Pose6(p, geo.matrix_to_rpy(R))


def fk_vector(model: RobotModel, q) -> np.ndarray:
    R, p = ee_transform(model, q)
    return np.concatenate([p, geo.matrix_to_rpy(R)])


def _mm_geometric(model, q):
    q = _as_qvec(q)
    Rb, pb, ob, zb = _arm_chain(model, q[3:])
    Rz = geo.rot_z(q[2])
    base_p = np.array([q[0], q[1], 0.0])
    p = Rz @ pb[0] + base_p
    origins = ob[0] @ Rz.T + base_p
    axes = zb[0] @ Rz.T
    n = model.n_arm
    J = np.zeros((6, 3 + n))
    J[0, 0] = 1.0
    J[1, 1] = 1.0
    r = p - base_p
    J[0, 2] = -r[1]
    J[1, 2] = r[0]
    J[5, 2] = 1.0
    J[:3, 3:] = np.cross(axes, p - origins).T
    J[3:, 3:] = axes.T
    return J, Rz @ Rb[0], p


def geometric_jacobian(model: RobotModel, q) -> np.ndarray:
    """6 x (3+n) Jacobian mapping joint rates to the tool twist (v, omega), world frame."""
    return _mm_geometric(model, q)[0]


def jacobian(model: RobotModel, q) -> np.ndarray:
    """Analytical Jacobian: joint rates to (position rates, roll-pitch-yaw rates).

    Raises SingularRepresentation when the tool pitch is within 1e-6 of +-pi/2.
    """
    J, R, _ = _mm_geometric(model, q)
    alpha = geo.matrix_to_rpy(R)
    Binv = geo.rpy_rate_matrix_inv(alpha)
    J[3:] = Binv @ J[3:]
    return J


def base_task_jacobian(model: RobotModel) -> np.ndarray:
    """Jacobian of the base pose (x, y, theta) w.r.t. the configuration: [I | 0]."""
    Jb = np.zeros((3, model.dof))
    Jb[:, :3] = np.eye(3)
    return Jb


# ----------------------------------------------------------------------------
# inverse kinematics


@dataclass
class IKSolution:
    q: np.ndarray
    success: bool
    iterations: int
    restarts: int = 0


def _target_rp(target):
    if isinstance(target, geo.Pose6):
        return geo.rpy_to_matrix(target.alpha), target.p.copy()
    if isinstance(target, geo.Transform):
        return target.R, target.p
    R, p = target
    return np.asarray(R, dtype=float), np.asarray(p, dtype=float)


def _dls_descent(model, R_t, p_t, q, max_iter, tol_p, tol_r):
    """One damped least-squares descent from ``q``; returns (q, success, iterations)."""
    chain = model._scalar
    lo, hi = model.limits[:, 0], model.limits[:, 1]
    lam2 = IK_DAMPING ** 2
    eye6 = np.eye(6)
    Rt = _mat(R_t)
    tx, ty, tz = (float(v) for v in p_t)
    tol_p2, tol_r2 = tol_p * tol_p, tol_r * tol_r
    best, best_it = np.inf, 0
    for it in range(max_iter + 1):
        Rc, (px, py, pz), o, z = chain(q.tolist())
        ex, ey, ez = tx - px, ty - py, tz - pz
        er = _rot_err(Rt, Rc)
        sq_p = ex * ex + ey * ey + ez * ez
        sq_r = er[0] * er[0] + er[1] * er[1] + er[2] * er[2]
        if sq_p < tol_p2 and sq_r < tol_r2:
            return q, True, it
        if it == max_iter:
            break
        err = sq_p + sq_r
        if err < 0.98 * best:
            best, best_it = err, it
        elif it - best_it > IK_STALL_ITERS:
            return q, False, it
        cols = []
        for (ox, oy, oz), (ax, ay, az) in zip(o, z):
            dx, dy, dz = px - ox, py - oy, pz - oz
            cols.append((ay * dz - az * dy, az * dx - ax * dz, ax * dy - ay * dx, ax, ay, az))
        JT = np.array(cols)
        e = np.array([ex, ey, ez, er[0], er[1], er[2]])
        dq = JT @ np.linalg.solve(JT.T @ JT + lam2 * eye6, e)
        m = np.max(np.abs(dq))
        if m > IK_STEP_CAP:
            dq *= IK_STEP_CAP / m
        q = np.clip(q + dq, lo, hi)
    return q, False, max_iter


def solve_ik(
    model: RobotModel,
    target,
    seed=None,
    rng=None,
    restarts=IK_RESTARTS,
    max_iter=IK_MAX_ITER,
    tol_p=IK_TOL_POS,
    tol_r=IK_TOL_ROT,
) -> IKSolution:
    """Damped least-squares arm IK for a base-frame tool target.

    Tries ``seed`` (default: the model's home config) and then up to
    ``restarts`` uniform random configurations.  Never raises.
    """
    R_t, p_t = _target_rp(target)
    if seed is None:
        seed = model.home_config
    q0 = np.clip(np.asarray(seed, dtype=float), model.limits[:, 0], model.limits[:, 1])
    if np.linalg.norm(p_t - model.reach_center) > model.reach + tol_p:
        return IKSolution(q0, False, 0, 0)
    total = 0
    q, ok, it = _dls_descent(model, R_t, p_t, q0, max_iter, tol_p, tol_r)
    total += it
    if ok:
        return IKSolution(q, True, total, 0)
    if rng is None:
        rng = np.random.default_rng(0)
    for k in range(restarts):
        q, ok, it = _dls_descent(model, R_t, p_t, model.random_arm(rng), max_iter, tol_p, tol_r)
        total += it
        if ok:
            return IKSolution(q, True, total, k + 1)
    return IKSolution(q, False, total, restarts)


def inverse_kinematics_arm(model: RobotModel, target, seed=None, rng=None, **kw) -> ArmConfig:
    """Arm configuration reaching a base-frame target pose, or raise Unreachable."""
    if isinstance(seed, ArmConfig):
        seed = seed.joints
    sol = solve_ik(model, target, seed=seed, rng=rng, **kw)
    if not sol.success:
        raise Unreachable("no IK solution from seed and restarts", iterations=sol.iterations)
    return ArmConfig(sol.q)


def solve_ik_batch(model: RobotModel, R_t, p_t, seeds, max_iter=IK_MAX_ITER,
                   tol_p=IK_TOL_POS, tol_r=IK_TOL_ROT):
    """Vectorised DLS IK over many targets, one seed each (no restarts).

    Returns (q, success) with shapes (N, n) and (N,).
    """
    q, success, _ = _ik_batch(model, R_t, p_t, seeds, max_iter, tol_p, tol_r)
    return q, success


def _ik_batch(model, R_t, p_t, seeds, max_iter, tol_p, tol_r):
    """Batched descent; also returns per-row iteration counts."""
    R_t = np.asarray(R_t, dtype=float)
    p_t = np.asarray(p_t, dtype=float)
    q = np.clip(np.array(seeds, dtype=float), model.limits[:, 0], model.limits[:, 1])
    N = len(q)
    success = np.zeros(N, dtype=bool)
    active = np.linalg.norm(p_t - model.reach_center, axis=1) <= model.reach + tol_p
    idx = np.flatnonzero(active)
    lo, hi = model.limits[:, 0], model.limits[:, 1]
    lam2 = IK_DAMPING ** 2
    eye6 = np.eye(6)
    best = np.full(N, np.inf)
    best_it = np.zeros(N, dtype=int)
    iters = np.zeros(N, dtype=int)
    for it in range(max_iter + 1):
        if idx.size == 0:
            break
        iters[idx] = it
        qa = q[idx]
        Rc, pc, o, z = _arm_chain(model, qa)
        e_p = p_t[idx] - pc
        e_r = _rotation_error_batch(R_t[idx], Rc)
        sq_p = np.einsum("ij,ij->i", e_p, e_p)
        sq_r = np.einsum("ij,ij->i", e_r, e_r)
        done = (sq_p < tol_p * tol_p) & (sq_r < tol_r * tol_r)
        success[idx[done]] = True
        err = sq_p + sq_r
        improved = err < 0.98 * best[idx]
        best[idx[improved]] = err[improved]
        best_it[idx[improved]] = it
        keep = ~done & (it - best_it[idx] <= IK_STALL_ITERS)
        if it == max_iter or not keep.any():
            break
        idx, qa, pc, o, z = idx[keep], qa[keep], pc[keep], o[keep], z[keep]
        e = np.concatenate([e_p[keep], e_r[keep]], axis=1)
        J = np.empty((len(idx), 6, model.n_arm))
        J[:, :3] = np.cross(z, pc[:, None, :] - o).transpose(0, 2, 1)
        J[:, 3:] = z.transpose(0, 2, 1)
        JT = J.transpose(0, 2, 1)
        A = J @ JT + lam2 * eye6
        dq = (JT @ np.linalg.solve(A, e[..., None]))[..., 0]
        m = np.max(np.abs(dq), axis=1)
        scale = np.where(m > IK_STEP_CAP, IK_STEP_CAP / np.maximum(m, 1e-300), 1.0)
        q[idx] = np.clip(qa + dq * scale[:, None], lo, hi)
    return q, success, iters


def _rotation_error_batch(R_t, R_c):
    R = R_t @ R_c.transpose(0, 2, 1)
    cos_a = np.clip((np.trace(R, axis1=1, axis2=2) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(cos_a)
    w = np.stack([R[:, 2, 1] - R[:, 1, 2], R[:, 0, 2] - R[:, 2, 0], R[:, 1, 0] - R[:, 0, 1]], axis=1)
    out = np.empty_like(w)
    small = angle < 1e-8
    near_pi = (np.pi - angle) < 1e-6
    regular = ~(small | near_pi)
    out[small] = 0.5 * w[small]
    a = angle[regular]
    out[regular] = (a / (2.0 * np.sin(a)))[:, None] * w[regular]
    for i in np.flatnonzero(near_pi):
        out[i] = geo._log_so3(R[i])
    return out


# ----------------------------------------------------------------------------
# link geometry


def link_points(model: RobotModel, qa, base=None, skip_links=0):
    """Sample points along every arm link (POINTS_PER_LINK per link).

    Links run between consecutive frame origins (mount, joints, tool).  If
    ``base`` (x, y, theta) is given the points are in the world frame,
    otherwise in the base frame.  ``skip_links`` drops the first links.
    """
    c = model._chain
    _, p, o, _ = _arm_chain(model, qa)
    nodes = np.concatenate([c["mount_p"][None, None, :].repeat(len(p), 0), o, p[:, None, :]], axis=1)
    a = nodes[:, :-1][:, skip_links:]
    b = nodes[:, 1:][:, skip_links:]
    t = np.linspace(0.0, 1.0, POINTS_PER_LINK)
    pts = a[:, :, None, :] + t[None, None, :, None] * (b - a)[:, :, None, :]
    pts = pts.reshape(len(p), -1, 3)
    if base is not None:
        x, y, th = base
        Rz = geo.rot_z(th)
        pts = pts @ Rz.T + np.array([x, y, 0.0])
    if np.ndim(qa) == 1:
        return pts[0]
    return pts


SELF_COLLISION_SKIP = 2
GROUND_CLEARANCE = 0.02


def self_collision(model: RobotModel, qa) -> np.ndarray:
    """Batched self-collision test of distal arm links against base body and ground.

    The first SELF_COLLISION_SKIP links (mount to shoulder) are attached to the
    base and ignored.  A sample point collides when it is inside the base
    cylinder or below GROUND_CLEARANCE.
    """
    qa2 = np.atleast_2d(qa)
    pts = link_points(model, qa2, skip_links=SELF_COLLISION_SKIP)
    r = np.hypot(pts[..., 0], pts[..., 1])
    inside_base = (r < model.footprint_radius) & (pts[..., 2] < model.base_height)
    below = pts[..., 2] < GROUND_CLEARANCE
    hit = np.any(inside_base | below, axis=1)
    if np.ndim(qa) == 1:
        return bool(hit[0])
    return hit


__all__ = [
    "ArmConfig", "BaseConfig", "MMConfig", "Joint", "RobotModel", "IKSolution",
    "forward_kinematics", "fk_vector", "ee_transform", "jacobian", "geometric_jacobian",
    "arm_fk", "arm_fk_batch", "arm_geometric_jacobian", "base_task_jacobian",
    "solve_ik", "solve_ik_batch", "inverse_kinematics_arm", "link_points", "self_collision",
    "load_model", "save_model", "model_from_dict", "model_to_dict", "SingularRepresentation",
]
