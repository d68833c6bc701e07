"""Baseline planners used for comparison with the hierarchical planner.

Composite configurations are flat vectors ``[q_1, ..., q_n, t_obj]`` where
each ``q_i = [x, y, theta, q_a...]`` and ``t_obj`` is the 6-D object pose.

``pj``
    RRT / RRT-Connect directly in composite space.  Every new node and every
    edge sample is projected onto the closed-chain manifold with Newton
    steps through a truncated-SVD pseudoinverse of the constrained Jacobian.
``decoupled``
    plans the object alone, then checks afterwards whether the robots can
    follow each waypoint.
``vs``
    treats the formation as one rigid virtual structure whose ground hull
    may not overlap any obstacle, regardless of height.
"""
from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from . import planner as pl
from . import robot as rb
from . import scene as sc
from .errors import Diverged, SingularRepresentation

log = logging.getLogger(__name__)

ROBOT_INFEASIBLE = "RobotInfeasible"
PINV_CUTOFF = 1e-8
FEASIBILITY_SAMPLES = 1000
DISC_SIDES = 16


# ----------------------------------------------------------------------------
# composite configurations


def composite_layout(models) -> list:
    """Slices of each robot's block in a composite vector; the object is last."""
    out, k = [], 0
    for m in models:
        out.append(slice(k, k + m.dof))
        k += m.dof
    return out


def composite_size(models) -> int:
    return sum(m.dof for m in models) + 6


def split_composite(models, c):
    c = np.asarray(c, dtype=float)
    return [c[s] for s in composite_layout(models)], c[-6:]


def join_composite(qs, t_obj) -> np.ndarray:
    return np.concatenate([np.asarray(q, dtype=float) for q in qs] + [pl._vec(t_obj)])


def _angle_mask(models) -> np.ndarray:
    """Components compared modulo 2 pi: base headings and object angles."""
    mask = np.zeros(composite_size(models), dtype=bool)
    for s in composite_layout(models):
        mask[s.start + 2] = True
    mask[-3:] = True
    return mask


def composite_difference(models, a, b) -> np.ndarray:
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    m = _angle_mask(models)
    d[m] = geo.wrap_angle(d[m])
    return d


def composite_distance(models, a, b) -> float:
    return float(np.linalg.norm(composite_difference(models, a, b)))


def _models(scene, models):
    return scene.models if models is None else list(models)


# ----------------------------------------------------------------------------
# closed-chain constraint


def closed_chain_residual(scene: sc.Scene, models, c) -> np.ndarray:
    """Stacked per-robot ``t_e - t_g`` (6n), angle components wrapped."""
    models = _models(scene, models)
    qs, t_obj = split_composite(models, c)
    out = np.empty(6 * len(models))
    for i, (m, q, g) in enumerate(zip(models, qs, sc.grasp_poses(scene, t_obj))):
        d = rb.fk_vector(m, q) - g.as_vector()
        d[3:] = geo.wrap_angle(d[3:])
        out[6 * i:6 * i + 6] = d
    return out


def grasp_jacobian(t_obj, grasp: sc.GraspSpec) -> np.ndarray:
    """6 x 6 map ``W`` from object pose rates to grasp pose rates.

    ``W = [[I, -S(R_o p) B(a_o)], [0, B^-1(a_g) B(a_o)]]`` with ``p`` the
    grasp offset in the object frame, so ``R_o p`` is that offset expressed
    in world axes.
    """
    t = pl._vec(t_obj)
    R_o = geo.rpy_to_matrix(t[3:])
    Tg = geo.compose(geo.Transform(R_o, t[:3]), grasp.transform)
    a_g = geo.matrix_to_rpy(Tg.R)
    B_o = geo.rpy_rate_matrix(t[3:])
    W = np.eye(6)
    W[:3, 3:] = -geo.skew(R_o @ np.asarray(grasp.xyz, dtype=float)) @ B_o
    W[3:, 3:] = geo.rpy_rate_matrix_inv(a_g) @ B_o
    return W


def constrained_jacobian(scene: sc.Scene, models, c) -> np.ndarray:
    """Jacobian of :func:`closed_chain_residual`: ``[blockdiag(J_i) | -W]``.

    Raises SingularRepresentation near a roll-pitch-yaw singularity of any
    tool, grasp or object frame.
    """
    models = _models(scene, models)
    qs, t_obj = split_composite(models, c)
    n = composite_size(models)
    J = np.zeros((6 * len(models), n))
    for i, (m, q, s, r) in enumerate(zip(models, qs, composite_layout(models), scene.robots)):
        J[6 * i:6 * i + 6, s] = rb.jacobian(m, q)
        J[6 * i:6 * i + 6, -6:] = -grasp_jacobian(t_obj, r.grasp)
    return J


def truncated_pinv(J, cutoff=PINV_CUTOFF) -> np.ndarray:
    """Pseudoinverse dropping singular values at or below ``cutoff``."""
    U, s, Vt = np.linalg.svd(J, full_matrices=False)
    inv = np.zeros_like(s)
    keep = s > cutoff
    inv[keep] = 1.0 / s[keep]
    return (Vt.T * inv) @ U.T


@dataclass(frozen=True)
class ProjectionParams:
    """Newton projection settings.

    ``fixed_object`` keeps the object pose and moves only the robots.
    """
    tolerance: float = 1e-4
    max_iter: int = 100
    damping: float = 1.0
    fixed_object: bool = False

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iter < 0:
            raise ValueError("max_iter must be non-negative")


@dataclass
class Projection:
    c: np.ndarray
    iterations: int
    residual: float


def project(scene: sc.Scene, models, c, params: ProjectionParams = ProjectionParams()) -> Projection:
    """Move ``c`` onto the closed-chain manifold; raises Diverged on failure."""
    models = _models(scene, models)
    c = np.array(c, dtype=float)
    mask = _angle_mask(models)
    for it in range(params.max_iter + 1):
        r = closed_chain_residual(scene, models, c)
        norm = float(np.linalg.norm(r))
        if not np.isfinite(norm):
            break
        if norm <= params.tolerance:
            return Projection(c, it, norm)
        if it == params.max_iter:
            break
        try:
            J = constrained_jacobian(scene, models, c)
        except SingularRepresentation as exc:
            raise Diverged("singular representation during projection", norm, it) from exc
        if params.fixed_object:
            dc = np.zeros_like(c)
            dc[:-6] = truncated_pinv(J[:, :-6]) @ r
        else:
            dc = truncated_pinv(J) @ r
        c = c - params.damping * dc
        c[mask] = geo.wrap_angle(c[mask])
    raise Diverged(f"residual {norm:.3g} after {params.max_iter} iterations", norm, params.max_iter)


# ----------------------------------------------------------------------------
# composite validity


def composite_valid(scene: sc.Scene, models, c, tolerance=None) -> bool:
    """Collision and joint-limit check; closed chain too when ``tolerance`` is given."""
    models = _models(scene, models)
    qs, t_obj = split_composite(models, c)
    pose = geo.Pose6.from_vector(t_obj)
    if sc.object_in_collision(scene, pose):
        return False
    poly = sc.object_footprint(scene, pose)[0]
    for m, q in zip(models, qs):
        if not m.within_limits(q[3:]):
            return False
        if pl.bases_blocked(scene, m, q[None, :2], poly)[0]:
            return False
        if rb.self_collision(m, q[3:]) or sc.arm_in_collision(scene, m, q):
            return False
    if tolerance is not None:
        return bool(np.linalg.norm(closed_chain_residual(scene, models, c)) <= tolerance)
    return True


def random_composite(scene: sc.Scene, models, rng) -> np.ndarray:
    """Uniform composite sample: object in scene bounds, bases in the world, arms in limits."""
    models = _models(scene, models)
    qs = []
    for m in models:
        xy = rng.uniform(scene.world_min, scene.world_max)
        qs.append(np.concatenate([xy, [rng.uniform(-np.pi, np.pi)], m.random_arm(rng)]))
    return join_composite(qs, pl.sample_uniform(rng, scene.bounds_lo, scene.bounds_hi))


def sample_composite(scene: sc.Scene, t_obj, rng, max_samples=FEASIBILITY_SAMPLES,
                     thres=pl.DEFAULT_THRES) -> np.ndarray | None:
    """A random feasible composite configuration holding the object at ``t_obj``.

    Each robot gets the first IK-checked base in its allowed sampling region,
    so arm branches and base placements vary with ``rng``.
    """
    pose = geo.Pose6.from_vector(pl._vec(t_obj))
    qs = []
    for r, T in zip(scene.robots, sc.grasp_transforms(scene, pose)):
        s = pl.sample_in_asr(scene, None, r.model, T, None, max_samples, "ikcl", rng, pose, thres)
        if s is None:
            return None
        qs.append(np.concatenate([s.base.as_vector(), s.arm]))
    c = join_composite(qs, pose.as_vector())
    # IK tolerances are loose next to the projection tolerance; tighten
    try:
        c = project(scene, None, c, ProjectionParams(tolerance=1e-10, max_iter=20,
                                                     fixed_object=True)).c
    except Diverged:
        return None
    return c if composite_valid(scene, None, c) else None


def composite_endpoints(scene: sc.Scene, seed=0):
    """(start, goal) composite configurations for the scene's start/goal poses.

    Frozen values in ``scene.meta`` (``composite_start``/``composite_goal``)
    take precedence; otherwise they are sampled with ``seed``.
    """
    rng = np.random.default_rng(seed)
    out = []
    for key, t in (("composite_start", scene.start), ("composite_goal", scene.goal)):
        v = scene.meta.get(key)
        if v is not None:
            out.append(np.array(v, dtype=float))
        else:
            out.append(sample_composite(scene, t, rng))
    return tuple(out)


# ----------------------------------------------------------------------------
# projection planner


class _CompositeTree:
    def __init__(self, root):
        self.nodes = [np.asarray(root, dtype=float)]
        self.parent = [-1]

    def add(self, x, parent) -> int:
        self.nodes.append(x)
        self.parent.append(parent)
        return len(self.nodes) - 1

    def nearest(self, x, models) -> int:
        d = np.asarray(self.nodes) - x
        m = _angle_mask(models)
        d[:, m] = geo.wrap_angle(d[:, m])
        return int(np.argmin(np.einsum("ij,ij->i", d, d)))

    def path_to(self, i) -> list:
        out = []
        while i >= 0:
            out.append(self.nodes[i])
            i = self.parent[i]
        return out[::-1]


class _PJContext:
    def __init__(self, scene, models, request, params, clock, stats):
        self.scene = scene
        self.models = models
        self.req = request
        self.params = params
        self.clock = clock
        self.stats = stats

    def project(self, c):
        if self.clock.expired():
            return None
        try:
            return project(self.scene, self.models, c, self.params).c
        except Diverged:
            return None

    def valid(self, c) -> bool:
        self.stats.valid_checks += 1
        return composite_valid(self.scene, self.models, c)

    def steer(self, a, x, step):
        d = composite_difference(self.models, x, a)
        n = float(np.linalg.norm(d))
        if n <= step:
            return np.asarray(x, dtype=float).copy()
        return a + d * (step / n)

    def edge(self, a, b) -> bool:
        """Project and check samples at half-step spacing strictly inside ``a``-``b``."""
        d = composite_difference(self.models, b, a)
        n = float(np.linalg.norm(d))
        k = int(np.ceil(n / (self.req.step / 2)))
        prev = a
        for j in range(1, k):
            c = self.project(a + d * (j / k))
            if c is None or not self.valid(c):
                return False
            # a projected sample must stay near its neighbour
            if composite_distance(self.models, c, prev) > self.req.step:
                return False
            prev = c
        return composite_distance(self.models, b, prev) <= self.req.step

    def extend(self, tree, x):
        i = tree.nearest(x, self.models)
        near = tree.nodes[i]
        new = self.project(self.steer(near, x, self.req.step))
        if new is None:
            return "trapped", None
        if composite_distance(self.models, new, near) < 1e-9:
            return "reached", i
        if composite_distance(self.models, new, near) > 2 * self.req.step:
            return "trapped", None
        if not (self.valid(new) and self.edge(near, new)):
            return "trapped", None
        j = tree.add(new, i)
        reached = composite_distance(self.models, new, x) <= self.req.goal_tol
        return ("reached" if reached else "advanced"), j

    def connect(self, tree, x):
        while True:
            status, j = self.extend(tree, x)
            if status != "advanced" or self.clock.expired():
                return status, j


def _pj_rrt(ctx, start, goal, rng):
    tree = _CompositeTree(start)
    while not ctx.clock.expired():
        ctx.clock.iterations += 1
        ctx.stats.samples += 1
        x = goal if rng.random() < ctx.req.goal_bias else random_composite(ctx.scene, ctx.models, rng)
        status, j = ctx.extend(tree, x)
        if status == "trapped":
            continue
        if composite_distance(ctx.models, tree.nodes[j], goal) <= ctx.req.goal_tol:
            return tree.path_to(j), len(tree.nodes)
    return None, len(tree.nodes)


def _pj_rrtconnect(ctx, start, goal, rng):
    ta, tb = _CompositeTree(start), _CompositeTree(goal)
    a_is_start = True
    while not ctx.clock.expired():
        ctx.clock.iterations += 1
        ctx.stats.samples += 1
        x = random_composite(ctx.scene, ctx.models, rng)
        status, j = ctx.extend(ta, x)
        if status != "trapped":
            cstatus, k = ctx.connect(tb, ta.nodes[j])
            if cstatus == "reached":
                pa, pb = ta.path_to(j), tb.path_to(k)
                path = pa + pb[::-1][1:] if a_is_start else pb + pa[::-1][1:]
                return path, len(ta.nodes) + len(tb.nodes)
        ta, tb = tb, ta
        a_is_start = not a_is_start
    return None, len(ta.nodes) + len(tb.nodes)


def pj_plan(scene: sc.Scene, models=None, request: pl.PlanRequest | None = None,
            c_start=None, c_goal=None, params: ProjectionParams = ProjectionParams()) -> pl.PlanResult:
    """Projection-based planning in composite space.

    ``c_start``/``c_goal`` default to :func:`composite_endpoints`.  Only the
    closed-chain and collision constraints are enforced; the formation metric
    plays no role.  The result's ``configs`` holds the composite path.
    """
    models = _models(scene, models)
    if request is None:
        request = pl.PlanRequest(scene.start, scene.goal, budget=scene.budget or 10.0)
    if request.planner not in ("rrt", "rrtconnect"):
        raise ValueError("the projection planner supports rrt and rrtconnect")
    stats = pl.PlanStats()
    clock = pl._Clock(request.budget, request.max_iterations)
    rng = np.random.default_rng(request.seed)
    if c_start is None or c_goal is None:
        s, g = composite_endpoints(scene)
        c_start = s if c_start is None else c_start
        c_goal = g if c_goal is None else c_goal
    ctx = _PJContext(scene, models, request, params, clock, stats)
    for c, status in ((c_goal, pl.INVALID_GOAL), (c_start, pl.INVALID_START)):
        if c is None or not composite_valid(scene, models, c, tolerance=params.tolerance):
            stats.wall_time = clock.elapsed()
            return pl.PlanResult(status, None, stats)
    c_start, c_goal = np.asarray(c_start, dtype=float), np.asarray(c_goal, dtype=float)
    backend = _pj_rrt if request.planner == "rrt" else _pj_rrtconnect
    raw, stats.nodes = backend(ctx, c_start, c_goal, rng)
    stats.wall_time = clock.elapsed()
    if raw is None:
        return pl.PlanResult(pl.TIMEOUT, None, stats)
    configs = np.array(raw)
    w = configs[:, -6:]
    path = pl.ObjectPath(w, pl.time_parameterize(w, request.object_speed))
    return pl.PlanResult(pl.SUCCESS, path, stats, {"raw_waypoints": len(raw)}, configs=configs)


# ----------------------------------------------------------------------------
# decoupled framework


def robot_feasibility(scene: sc.Scene, cms, waypoints, spacing, rng, thres=pl.DEFAULT_THRES,
                      max_samples=FEASIBILITY_SAMPLES, deadline=None):
    """Index of the first pose along ``waypoints`` the robots cannot hold, or None.

    The path is densified to ``spacing``; poses are numbered along the dense
    sequence.  Returns -1 if ``deadline`` passes first.
    """
    mode = "cmcl" if cms is not None and all(cm is not None for cm in cms) else "ikcl"
    valid = pl.Validator(scene, cms, mode, rng, thres, max_samples)
    w = np.asarray(waypoints, dtype=float)
    dense = [w[0]]
    for a, b in zip(w[:-1], w[1:]):
        dense.extend(pl.interpolate(a, b, spacing))
        dense.append(b)
    for k, t in enumerate(dense):
        if deadline is not None and time.monotonic() >= deadline:
            return -1
        if not valid(t):
            return k
    return None


def decoupled_plan(scene: sc.Scene, cms, request: pl.PlanRequest) -> pl.PlanResult:
    """Plan the object alone, then check that the robots can follow.

    Returns status ``RobotInfeasible`` with ``info["failed_waypoint"]`` when
    some densified pose has no feasible robot placement.
    """
    t0 = time.monotonic()
    res = pl.plan(scene, cms, dataclasses.replace(request, mode="none"))
    if not res.success:
        return res
    rng = np.random.default_rng([request.seed, 1])
    k = robot_feasibility(scene, cms, res.path.waypoints, request.step / 2, rng, request.thres,
                          deadline=None if request.max_iterations is not None
                          else t0 + request.budget)
    res.stats.wall_time = time.monotonic() - t0
    if k == -1:
        return pl.PlanResult(pl.TIMEOUT, None, res.stats)
    if k is not None:
        return pl.PlanResult(ROBOT_INFEASIBLE, res.path, res.stats, {"failed_waypoint": int(k)})
    return res


# ----------------------------------------------------------------------------
# virtual structure


def _disc_polygon(xy, r, sides=DISC_SIDES) -> np.ndarray:
    """Polygon circumscribing the disc, so it covers the disc entirely."""
    a = 2.0 * np.pi * np.arange(sides) / sides
    R = r / np.cos(np.pi / sides)
    return np.asarray(xy)[None, :] + R * np.column_stack([np.cos(a), np.sin(a)])


def virtual_structure_hull(scene: sc.Scene, models, t_obj) -> np.ndarray:
    models = _models(scene, models)
    pose = geo.Pose6.from_vector(pl._vec(t_obj))
    pts = [sc.object_footprint(scene, pose)[0]]
    for m, b in zip(models, sc.nominal_bases(scene, pose)):
        pts.append(_disc_polygon(b[:2], m.footprint_radius))
    return sc.convex_hull_2d(np.vstack(pts))


def virtual_structure_check(scene: sc.Scene, models, t_obj) -> bool:
    """True when the formation's rigid ground hull touches any occupied cell or leaves the world."""
    hull = virtual_structure_hull(scene, models, t_obj)
    if not np.all(sc.in_world(scene, hull)):
        return True
    return sc.polygon_hits_cells(scene, hull, scene.occupied)


def vs_plan(scene: sc.Scene, cms, request: pl.PlanRequest) -> pl.PlanResult:
    """Hierarchical planning with the virtual-structure test added to every check."""
    models = scene.models
    return pl.plan(scene, cms, request,
                   extra_check=lambda pose: not virtual_structure_check(scene, models, pose))


FRAMEWORKS = ("hier", "pj", "decoupled", "vs")


def plan_framework(framework: str, scene: sc.Scene, cms, request: pl.PlanRequest) -> pl.PlanResult:
    framework = framework.lower()
    if framework == "hier":
        return pl.plan(scene, cms, request)
    if framework == "pj":
        return pj_plan(scene, None, request)
    if framework == "decoupled":
        return decoupled_plan(scene, cms, request)
    if framework == "vs":
        return vs_plan(scene, cms, request)
    raise ValueError(f"unknown framework {framework!r}")
