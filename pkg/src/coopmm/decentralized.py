"""Per-robot base optimiser, task-priority controller and execution simulator.

Each robot independently keeps its end effector on its grasp (primary task)
while its base follows a reference chosen by a small optimiser that maximises
the robot's formation metric inside the region the base can reach before the
next optimiser tick (secondary task, executed in the primary task's null space).
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import formation as fm
from . import geometry as geo
from . import planner as pl
from . import robot as rb
from . import scene as sc
from .errors import DegenerateProjection, DivergedTracking

INFEASIBLE = -1.0
PINV_DAMPING = 1e-4
# below this smallest singular value the damped inverse is used
SINGULAR_SIGMA = 1e-3
# the base task loses rank inside the end-effector null space at some arm
# configurations, so its inverse is damped much more strongly
SECONDARY_DAMPING = 0.05
SECONDARY_SIGMA = 0.05
DIVERGE_POS = 0.05
DIVERGE_ROT = 0.1
SEED_DRAWS = 40
NM_EVALUATIONS = 60
INITIAL_DRAWS = 400


@dataclass(frozen=True)
class OptimizerParams:
    t_opt: float = 0.040
    epsilon: float = 0.5
    v_max: float = 0.1
    deterministic: bool = True
    seed_draws: int = SEED_DRAWS
    nm_evaluations: int = NM_EVALUATIONS

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if not self.t_opt > 0:
            raise ValueError("t_opt must be positive")


@dataclass(frozen=True)
class ControllerGains:
    K_e: np.ndarray = field(default_factory=lambda: 2.0 * np.ones(6))
    K_b: np.ndarray = field(default_factory=lambda: 2.0 * np.ones(3))

    def __post_init__(self):
        ke = _diag(self.K_e, 6)
        kb = _diag(self.K_b, 3)
        if np.any(ke <= 0) or np.any(kb <= 0):
            raise ValueError("gains must be positive definite")
        object.__setattr__(self, "K_e", ke)
        object.__setattr__(self, "K_b", kb)


def _diag(k, n):
    k = np.asarray(k, dtype=float)
    if k.ndim == 2:
        k = np.diag(k)
    return np.broadcast_to(k, (n,)).astype(float)


# ----------------------------------------------------------------------------
# formation optimiser


@dataclass
class BaseOptimum:
    base: rb.BaseConfig
    metric: float
    arm: np.ndarray | None
    no_improvement: bool
    evaluations: int = 0
    seed_metric: float = INFEASIBLE
    ref_metric: float = INFEASIBLE


def get_bounds(q_b_ref, model: rb.RobotModel, params: OptimizerParams) -> np.ndarray:
    """(2, 3) box the base can reach within one optimiser period."""
    ref = np.asarray(q_b_ref, dtype=float)
    d = params.v_max * params.t_opt
    half = np.array([d, d, d / model.footprint_radius])
    return np.array([ref - half, ref + half])


def _footprint(scene, t_obj):
    if t_obj is None:
        return None
    return sc.object_footprint(scene, geo.Pose6.from_vector(pl._vec(t_obj)))[0]


class BaseObjective:
    """Formation metric of a base placement, -1 when infeasible.

    IK is warm-started from the best arm solution seen so far without random
    restarts, which keeps evaluations cheap and continuous.
    """

    def __init__(self, scene, model, t_g, t_obj, bounds, arm_seed):
        self.scene = scene
        self.model = model
        T = t_g if isinstance(t_g, geo.Transform) else geo.to_transform(t_g)
        self.R, self.p = T.R, T.p
        self.obj_xy = None if t_obj is None else np.asarray(pl._vec(t_obj))[:2]
        self.poly = _footprint(scene, t_obj)
        self.bounds = bounds
        self.arm_seed = model.home_config if arm_seed is None else np.asarray(arm_seed, dtype=float)
        self.evaluations = 0
        self.best = (INFEASIBLE, None, None)

    def __call__(self, b) -> float:
        b = np.asarray(b, dtype=float)
        self.evaluations += 1
        if np.any(b < self.bounds[0] - 1e-12) or np.any(b > self.bounds[1] + 1e-12):
            return INFEASIBLE
        if pl.bases_blocked(self.scene, self.model, b[None, :2], self.poly)[0]:
            return INFEASIBLE
        pose = pl.pose_in_base_frame(self.R, self.p, b[None, :])[0]
        seed = self.best[2] if self.best[2] is not None else self.arm_seed
        sol = rb.solve_ik(self.model, (geo.rpy_to_matrix(pose[3:]), pose[:3]), seed=seed, restarts=0)
        if not sol.success:
            return INFEASIBLE
        q = np.concatenate([b, sol.q])
        if rb.self_collision(self.model, sol.q) or sc.arm_in_collision(self.scene, self.model, q):
            return INFEASIBLE
        try:
            mu = fm.normalized_manipulability(self.model, q)
            _, p_e = rb.ee_transform(self.model, q)
            eb, eo = fm.planar_alignment(b[:2], b[2], p_e[:2], self.obj_xy)
        except DegenerateProjection:
            return INFEASIBLE
        f = mu * fm.f_r(float(eb)) * fm.f_r(float(eo))
        if f > self.best[0]:
            self.best = (f, b.copy(), sol.q)
        return f


class _OutOfBudget(Exception):
    pass


def optimize_base(scene: sc.Scene, cm, model: rb.RobotModel, t_g, q_b_ref,
                  params: OptimizerParams = OptimizerParams(), t_obj=None, rng=None,
                  arm_seed=None) -> BaseOptimum:
    """Best base near ``q_b_ref`` for grasp ``t_g`` (seed phase, then Nelder-Mead).

    The seed phase draws base placements in the bounds and ranks them with the
    capability map; the best draw and ``q_b_ref`` are scored with the true
    metric and the better one starts a Nelder-Mead search.  Budgets are counts
    (``params.deterministic``) or wall time split ``epsilon : 1 - epsilon``.
    The best feasible point ever evaluated is returned, so the result is never
    worse than the seed or the reference.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    ref = np.asarray(q_b_ref.as_vector() if isinstance(q_b_ref, rb.BaseConfig) else q_b_ref,
                     dtype=float)
    bounds = get_bounds(ref, model, params)
    obj = BaseObjective(scene, model, t_g, t_obj, bounds, arm_seed)
    t0 = time.monotonic()

    f_ref = obj(ref)
    # seed phase
    seed_b, seed_f = None, INFEASIBLE
    T = t_g if isinstance(t_g, geo.Transform) else geo.to_transform(t_g)
    draws = 0
    while True:
        if params.deterministic:
            n = params.seed_draws - draws
        else:
            n = 8 if time.monotonic() - t0 < params.epsilon * params.t_opt else 0
        if n <= 0:
            break
        b = rng.uniform(bounds[0], bounds[1], size=(n, 3))
        draws += n
        if cm is not None:
            vals = cm.query_batch(pl.pose_in_base_frame(T.R, T.p, b))
            vals = np.where(np.isnan(vals), INFEASIBLE, vals)
        else:
            vals = np.full(n, INFEASIBLE)
        coll = pl.bases_blocked(scene, model, b[:, :2], obj.poly)
        vals[coll] = INFEASIBLE
        k = int(np.argmax(vals))
        if vals[k] > seed_f:
            seed_f, seed_b = float(vals[k]), b[k]
    seed_true = obj(seed_b) if seed_b is not None else INFEASIBLE

    start = obj.best[1] if obj.best[1] is not None else None
    if start is not None:
        width = bounds[1] - bounds[0]
        budget_left = params.nm_evaluations

        def fun(x):
            if params.deterministic:
                if obj.evaluations >= budget_used[0] + params.nm_evaluations:
                    raise _OutOfBudget
            elif time.monotonic() - t0 >= params.t_opt:
                raise _OutOfBudget
            return -obj(x)

        budget_used = [obj.evaluations]
        for _ in range(2):  # one restart from the best point when converged early
            x0 = obj.best[1]
            simplex = np.vstack([x0, x0 + np.diag(0.25 * width)])
            try:
                minimize(fun, x0, method="Nelder-Mead",
                         options={"initial_simplex": simplex, "maxfev": budget_left,
                                  "xatol": 1e-5, "fatol": 1e-7})
            except _OutOfBudget:
                break
            budget_left = budget_used[0] + params.nm_evaluations - obj.evaluations
            if budget_left <= 3:
                break

    f_best, b_best, q_best = obj.best
    if b_best is None:
        return BaseOptimum(rb.BaseConfig.from_vector(ref), INFEASIBLE, None, True,
                           obj.evaluations, seed_true, f_ref)
    improved = f_best > f_ref
    return BaseOptimum(rb.BaseConfig.from_vector(b_best), float(f_best), q_best, not improved,
                       obj.evaluations, seed_true, f_ref)


# ----------------------------------------------------------------------------
# task-priority controller


def pinv(J, damping=PINV_DAMPING, sigma_min=SINGULAR_SIGMA) -> np.ndarray:
    """Exact pseudoinverse away from singularity, damped least squares near it."""
    U, s, Vt = np.linalg.svd(J, full_matrices=False)
    if s.size and s[-1] >= sigma_min:
        return (Vt.T / s) @ U.T
    return (Vt.T * (s / (s * s + damping * damping))) @ U.T


@dataclass
class Desired:
    t_e: np.ndarray
    dt_e: np.ndarray
    t_b: np.ndarray
    dt_b: np.ndarray


def task_priority_terms(model: rb.RobotModel, q, desired: Desired,
                        gains: ControllerGains = ControllerGains()):
    """(primary term, null-space term, J) of the task-priority law."""
    q = rb._as_qvec(q)
    J = rb.jacobian(model, q)
    t_e = rb.fk_vector(model, q)
    e_e = geo.pose_difference(desired.t_e, t_e)
    w_e = gains.K_e * e_e + np.asarray(desired.dt_e, dtype=float)
    e_b = np.asarray(desired.t_b, dtype=float) - q[:3]
    e_b[2] = geo.wrap_angle(e_b[2])
    w_b = gains.K_b * e_b + np.asarray(desired.dt_b, dtype=float)
    Jp = pinv(J)
    Jb = rb.base_task_jacobian(model)
    N = np.eye(len(q)) - Jp @ J
    primary = Jp @ w_e
    JbN = Jb @ N
    secondary = pinv(JbN, SECONDARY_DAMPING, SECONDARY_SIGMA) @ (w_b - Jb @ primary)
    return primary, secondary, J


def task_priority_step(model: rb.RobotModel, q, desired: Desired,
                       gains: ControllerGains = ControllerGains()) -> np.ndarray:
    """Joint velocities tracking the grasp first and the base reference in the null space."""
    primary, secondary, _ = task_priority_terms(model, q, desired, gains)
    return primary + secondary


# ----------------------------------------------------------------------------
# simulation


@dataclass
class TrackingLog:
    t: np.ndarray
    ee_desired: np.ndarray  # (T, n, 6)
    ee_actual: np.ndarray
    base_desired: np.ndarray  # (T, n, 3)
    base_actual: np.ndarray
    qdot: np.ndarray  # (T, n, dof)
    metric: np.ndarray  # (T, n)
    null_residual: np.ndarray  # (T, n) |J @ null term|_inf
    status: str = "ok"
    info: dict = field(default_factory=dict)

    @property
    def ee_error(self) -> np.ndarray:
        return geo.pose_difference(self.ee_desired, self.ee_actual)

    def summary(self, steady_after=None) -> dict:
        err = np.abs(self.ee_error)
        if steady_after is None:
            steady_after = self.t[-1] / 2 if len(self.t) else 0.0
        ss = err[self.t >= steady_after] if len(self.t) else err
        return {
            "status": self.status,
            "ticks": int(len(self.t)),
            "duration": float(self.t[-1]) if len(self.t) else 0.0,
            "max_position_error": float(err[..., :3].max()) if err.size else 0.0,
            "max_orientation_error": float(err[..., 3:].max()) if err.size else 0.0,
            "steady_state_after": float(steady_after),
            "steady_state_max_error_per_axis": [float(v) for v in ss.reshape(-1, 6).max(axis=0)]
            if ss.size else [0.0] * 6,
            "closed_chain_residual_max": float(err[..., :3].max()) if err.size else 0.0,
            "null_space_residual_max": float(self.null_residual.max()) if self.null_residual.size else 0.0,
            "min_metric": float(self.metric.min()) if self.metric.size else 0.0,
        }

    def csv_columns(self) -> list:
        n = self.ee_desired.shape[1]
        dof = self.qdot.shape[2]
        cols = ["t"]
        for i in range(n):
            r = f"r{i}"
            cols += [f"{r}_ee_des_{a}" for a in sc.AXES]
            cols += [f"{r}_ee_act_{a}" for a in sc.AXES]
            cols += [f"{r}_base_des_{a}" for a in ("x", "y", "theta")]
            cols += [f"{r}_base_act_{a}" for a in ("x", "y", "theta")]
            cols += [f"{r}_qdot_{k}" for k in range(dof)]
            cols += [f"{r}_metric"]
        return cols

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.csv_columns())
        for k in range(len(self.t)):
            row = [self.t[k]]
            for i in range(self.ee_desired.shape[1]):
                row += list(self.ee_desired[k, i]) + list(self.ee_actual[k, i])
                row += list(self.base_desired[k, i]) + list(self.base_actual[k, i])
                row += list(self.qdot[k, i]) + [self.metric[k, i]]
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"


def _fmt(v) -> str:
    return format(float(v), ".9g")


def sinusoidal_roll_path(center, amplitude=0.2, period=10.0, duration=20.0, dt=0.01) -> pl.ObjectPath:
    """Stationary object whose roll follows ``amplitude * sin(2 pi t / period)``."""
    c = np.asarray(pl._vec(center), dtype=float)
    t = np.arange(0.0, duration + 0.5 * dt, dt)
    w = np.tile(c, (len(t), 1))
    w[:, 3] = c[3] + amplitude * np.sin(2.0 * np.pi * t / period)
    return pl.ObjectPath(w, np.diff(t))


def initial_configs(scene: sc.Scene, cms, t_obj, rng=None, draws=INITIAL_DRAWS) -> list:
    """Closed-chain start configurations for every robot at object pose ``t_obj``.

    For each robot, collision-free base draws around its grasp are ranked by
    capability-map value (or drawn blindly without maps), then solved with IK
    and scored with the true metric; the best feasible one is returned.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    out = []
    obj_xy = np.asarray(pl._vec(t_obj))[:2]
    poly = _footprint(scene, t_obj)
    for i, T in enumerate(sc.grasp_transforms(scene, t_obj)):
        model = scene.robots[i].model
        bounds = pl.default_asr_bounds(scene, model, T.p[:2])
        b = pl._draw_bases(rng, bounds, draws)
        b = b[~pl.bases_blocked(scene, model, b[:, :2], poly)]
        if cms is not None and cms[i] is not None:
            vals = cms[i].query_batch(pl.pose_in_base_frame(T.R, T.p, b))
            keep = ~np.isnan(vals)
            b, vals = b[keep], vals[keep]
            b = b[np.argsort(-vals, kind="stable")][:20]
        best = None
        for bb in b[:60]:
            pose = pl.pose_in_base_frame(T.R, T.p, bb[None, :])[0]
            sol = rb.solve_ik(model, (geo.rpy_to_matrix(pose[3:]), pose[:3]), rng=rng, restarts=2)
            if not sol.success:
                continue
            q = np.concatenate([bb, sol.q])
            if rb.self_collision(model, sol.q) or sc.arm_in_collision(scene, model, q):
                continue
            try:
                f = fm.normalized_manipulability(model, q)
                _, p_e = rb.ee_transform(model, q)
                eb, eo = fm.planar_alignment(bb[:2], bb[2], p_e[:2], obj_xy)
            except DegenerateProjection:
                continue
            f *= fm.f_r(float(eb)) * fm.f_r(float(eo))
            if best is None or f > best[0]:
                best = (f, q)
        if best is None:
            raise RuntimeError(f"no feasible start configuration for robot {i}")
        out.append(best[1])
    return out


def _metric(model, q, obj_xy):
    try:
        mu = fm.normalized_manipulability(model, q)
        _, p_e = rb.ee_transform(model, q)
        eb, eo = fm.planar_alignment(q[:2], q[2], p_e[:2], obj_xy)
    except DegenerateProjection:
        return 0.0
    return float(mu * fm.f_r(float(eb)) * fm.f_r(float(eo)))


def simulate_execution(scene: sc.Scene, cms, path: pl.ObjectPath,
                       params: OptimizerParams = OptimizerParams(),
                       gains: ControllerGains = ControllerGains(), rate_hz=100.0,
                       start_configs=None, seed=0, duration=None, raise_on_diverge=True) -> TrackingLog:
    """Execute a timed object path with one optimiser + controller per robot.

    The optimiser runs every ``t_opt`` seconds and its output becomes the base
    position reference, linearly interpolated over the next period with the
    matching velocity as feed-forward.  End-effector references are the grasp
    poses along the path with forward-difference feed-forward.  Joint rates are
    integrated with explicit Euler steps of ``1 / rate_hz``.
    """
    rng = np.random.default_rng(seed)
    models = scene.models
    n = len(models)
    dt = 1.0 / rate_hz
    if duration is None:
        duration = path.total_time
    ticks = int(math.floor(duration / dt + 1e-9)) + 1
    opt_every = max(1, int(round(params.t_opt / dt)))
    t0_obj = path.pose_at(0.0)
    if start_configs is None:
        start_configs = initial_configs(scene, cms, t0_obj, rng)
    q = [np.array(c, dtype=float) for c in start_configs]
    dof = max(len(c) for c in q)

    def grasps_at(t):
        return [np.concatenate([T.p, geo.matrix_to_rpy(T.R)])
                for T in sc.grasp_transforms(scene, path.pose_at(t))]

    b_old = [c[:3].copy() for c in q]
    b_new = [c[:3].copy() for c in q]
    arm_seed = [c[3:].copy() for c in q]
    log_t = np.empty(ticks)
    ee_d = np.empty((ticks, n, 6))
    ee_a = np.empty((ticks, n, 6))
    bd = np.empty((ticks, n, 3))
    ba = np.empty((ticks, n, 3))
    qd = np.zeros((ticks, n, dof))
    met = np.empty((ticks, n))
    nres = np.empty((ticks, n))
    status = "ok"
    info = {}
    g_next = grasps_at(0.0)
    for k in range(ticks):
        t = k * dt
        t_obj = path.pose_at(t)
        g_now = g_next
        g_next = grasps_at(t + dt)
        if k % opt_every == 0 and k > 0:
            transforms = sc.grasp_transforms(scene, path.pose_at(t + params.t_opt))
            for i in range(n):
                cm = None if cms is None else cms[i]
                res = optimize_base(scene, cm, models[i], transforms[i], b_new[i], params,
                                    t_obj=path.pose_at(t + params.t_opt), rng=rng,
                                    arm_seed=arm_seed[i])
                b_old[i] = b_new[i]
                b_new[i] = res.base.as_vector() if not res.no_improvement else b_new[i].copy()
                if res.arm is not None and not res.no_improvement:
                    arm_seed[i] = res.arm
            phase_start = k
        elif k == 0:
            phase_start = 0
        s = (k - phase_start) / opt_every
        for i in range(n):
            m = models[i]
            db = b_new[i] - b_old[i]
            db[2] = geo.wrap_angle(db[2])
            b_ref = b_old[i] + min(s, 1.0) * db
            b_ref[2] = geo.wrap_angle(b_ref[2])
            dt_b = db / (opt_every * dt) if s < 1.0 else np.zeros(3)
            dt_e = geo.pose_difference(g_next[i], g_now[i]) / dt
            des = Desired(g_now[i], dt_e, b_ref, dt_b)
            primary, secondary, J = task_priority_terms(m, q[i], des, gains)
            qdot = primary + secondary
            log_t[k] = t
            ee_d[k, i] = g_now[i]
            ee_a[k, i] = rb.fk_vector(m, q[i])
            bd[k, i] = b_ref
            ba[k, i] = q[i][:3]
            qd[k, i, :len(qdot)] = qdot
            met[k, i] = _metric(m, q[i], t_obj[:2])
            nres[k, i] = float(np.abs(J @ secondary).max())
            err = geo.pose_difference(g_now[i], ee_a[k, i])
            if np.abs(err[:3]).max() > DIVERGE_POS or np.abs(err[3:]).max() > DIVERGE_ROT:
                status = "diverged"
                info = {"tick": k, "robot": i, "error": [float(v) for v in err]}
        if status != "ok":
            cut = k + 1
            out = TrackingLog(log_t[:cut], ee_d[:cut], ee_a[:cut], bd[:cut], ba[:cut], qd[:cut],
                              met[:cut], nres[:cut], status, info)
            if raise_on_diverge:
                raise DivergedTracking(f"tracking error limit exceeded at tick {k}", tick=k)
            return out
        for i in range(n):
            q[i] = q[i] + qd[k, i, :len(q[i])] * dt
            q[i][2] = geo.wrap_angle(q[i][2])
    return TrackingLog(log_t, ee_d, ee_a, bd, ba, qd, met, nres, status, info)
