"""Object-pose planner with allowed-sampling-region validity checks.

A candidate object pose is valid when the object box is collision free and,
for every robot, some base placement in the allowed sampling region reaches the
robot's grasp with formation metric at or above the threshold.  Two modes
decide the per-robot question:

``cmcl``
    look the arm-frame grasp pose up in the robot's capability map;
``ikcl``
    solve arm IK online, then evaluate the true formation metric and check
    arm collisions.

Search backends are RRT, RRT-Connect and PRM over 6-D object poses with the
distance ``|dp| + 0.5 * |wrap(dalpha)|``.
"""
from __future__ import annotations

import heapq
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import formation as fm
from . import geometry as geo
from . import robot as rb
from . import scene as sc
from .errors import DegenerateProjection

log = logging.getLogger(__name__)

ROT_WEIGHT = 0.5
DEFAULT_STEP = 0.3
DEFAULT_GOAL_TOL = 1e-3
DEFAULT_MAX_SAMPLES = 100
DEFAULT_THRES = 0.4
DEFAULT_OBJECT_SPEED = 0.05
SHORTCUT_ATTEMPTS = 100
PRM_NEIGHBORS = 8
# Base draws already act as restarts of the ASR search; extra IK restarts on
# an unreachable draw almost never succeed, so IKCL spends only one
ASR_IK_RESTARTS = 1

SUCCESS = "Success"
TIMEOUT = "Timeout"
INVALID_GOAL = "InvalidGoal"
INVALID_START = "InvalidStart"

MODES = ("cmcl", "ikcl", "none")
PLANNERS = ("rrt", "rrtconnect", "prm")


# ----------------------------------------------------------------------------
# metric and steering


def distance(a, b) -> float:
    d = geo.pose_difference(b, a)
    return float(np.linalg.norm(d[:3]) + ROT_WEIGHT * np.linalg.norm(d[3:]))


def distances(nodes, b) -> np.ndarray:
    """Distance from every row of ``nodes`` (N, 6) to pose ``b``."""
    d = np.asarray(b, dtype=float) - nodes
    d[:, 3:] = geo.wrap_angle(d[:, 3:])
    return np.linalg.norm(d[:, :3], axis=1) + ROT_WEIGHT * np.linalg.norm(d[:, 3:], axis=1)


def steer(a, b, step) -> np.ndarray:
    """Move from ``a`` towards ``b`` by at most ``step`` in the pose metric."""
    a = np.asarray(a, dtype=float)
    d = geo.pose_difference(b, a)
    dist = np.linalg.norm(d[:3]) + ROT_WEIGHT * np.linalg.norm(d[3:])
    if dist <= step:
        out = a + d
    else:
        out = a + d * (step / dist)
    out[3:] = geo.wrap_angle(out[3:])
    return out


def interpolate(a, b, spacing) -> np.ndarray:
    """Poses strictly between ``a`` and ``b`` at most ``spacing`` apart."""
    a = np.asarray(a, dtype=float)
    d = geo.pose_difference(b, a)
    dist = np.linalg.norm(d[:3]) + ROT_WEIGHT * np.linalg.norm(d[3:])
    n = int(math.ceil(dist / spacing - 1e-12))
    if n <= 1:
        return np.zeros((0, 6))
    t = np.arange(1, n)[:, None] / n
    out = a + t * d
    out[:, 3:] = geo.wrap_angle(out[:, 3:])
    return out


def path_length(waypoints) -> float:
    w = np.asarray(waypoints, dtype=float)
    return float(sum(distance(w[i], w[i + 1]) for i in range(len(w) - 1)))


def sample_uniform(rng, lo, hi) -> np.ndarray:
    x = rng.uniform(lo, hi)
    x[3:] = geo.wrap_angle(x[3:])
    return x


# ----------------------------------------------------------------------------
# request / result types


@dataclass
class PlanRequest:
    t_start: geo.Pose6
    t_goal: geo.Pose6
    budget: float = 10.0
    planner: str = "rrtconnect"
    mode: str = "cmcl"
    seed: int = 0
    step: float = DEFAULT_STEP
    goal_tol: float = DEFAULT_GOAL_TOL
    max_samples: int = DEFAULT_MAX_SAMPLES
    thres: float = DEFAULT_THRES
    goal_bias: float = 0.05
    max_iterations: int | None = None
    smooth: bool = True
    object_speed: float = DEFAULT_OBJECT_SPEED
    endpoint_samples: int = 1000

    def __post_init__(self):
        if not self.budget > 0:
            raise ValueError("budget must be positive")
        if not self.step > 0:
            raise ValueError("step must be positive")
        self.planner = self.planner.lower()
        self.mode = self.mode.lower()
        if self.planner not in PLANNERS:
            raise ValueError(f"unknown planner {self.planner!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if not isinstance(self.t_start, geo.Pose6):
            self.t_start = geo.Pose6.from_vector(self.t_start)
        if not isinstance(self.t_goal, geo.Pose6):
            self.t_goal = geo.Pose6.from_vector(self.t_goal)


@dataclass
class ObjectPath:
    waypoints: np.ndarray
    durations: np.ndarray | None = None

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=float).reshape(-1, 6)
        if self.durations is not None:
            self.durations = np.asarray(self.durations, dtype=float)

    def __len__(self):
        return len(self.waypoints)

    @property
    def length(self) -> float:
        return path_length(self.waypoints)

    @property
    def times(self) -> np.ndarray:
        if self.durations is None:
            raise ValueError("path is not time parameterized")
        return np.concatenate([[0.0], np.cumsum(self.durations)])

    @property
    def total_time(self) -> float:
        return float(self.times[-1])

    def pose_at(self, t: float) -> np.ndarray:
        """Linear interpolation in time (angles along the wrapped difference)."""
        times = self.times
        if t <= 0:
            return self.waypoints[0].copy()
        if t >= times[-1]:
            return self.waypoints[-1].copy()
        i = int(np.searchsorted(times, t, side="right") - 1)
        s = (t - times[i]) / max(times[i + 1] - times[i], 1e-300)
        d = geo.pose_difference(self.waypoints[i + 1], self.waypoints[i])
        out = self.waypoints[i] + s * d
        out[3:] = geo.wrap_angle(out[3:])
        return out

    def to_dict(self) -> dict:
        d = {"waypoints": [[float(v) for v in w] for w in self.waypoints]}
        if self.durations is not None:
            d["durations"] = [float(v) for v in self.durations]
        return d

    @classmethod
    def from_dict(cls, d) -> ObjectPath:
        return cls(np.array(d["waypoints"], dtype=float), d.get("durations"))


@dataclass
class PlanStats:
    samples: int = 0
    valid_checks: int = 0
    cm_queries: int = 0
    ik_calls: int = 0
    nodes: int = 0
    wall_time: float = 0.0

    def as_dict(self, include_time=True) -> dict:
        d = {"samples": self.samples, "valid_checks": self.valid_checks,
             "cm_queries": self.cm_queries, "ik_calls": self.ik_calls, "nodes": self.nodes}
        if include_time:
            d["wall_time"] = self.wall_time
        return d


@dataclass
class PlanResult:
    status: str
    path: ObjectPath | None = None
    stats: PlanStats = field(default_factory=PlanStats)
    info: dict = field(default_factory=dict)
    configs: np.ndarray | None = None  # composite configurations, when planned jointly

    @property
    def success(self) -> bool:
        return self.status == SUCCESS

    def to_dict(self, include_time=False) -> dict:
        d = {"status": self.status, "stats": self.stats.as_dict(include_time)}
        if self.path is not None:
            d["path"] = self.path.to_dict()
            d["path_length"] = self.path.length
        if self.info:
            d["info"] = self.info
        return d


# ----------------------------------------------------------------------------
# allowed sampling region


def default_asr_bounds(scene: sc.Scene, model: rb.RobotModel, grasp_xy) -> np.ndarray:
    """Base (x, y) box: the world intersected with the arm's horizontal reach.

    Bases outside this box cannot reach the grasp at all, so restricting the
    draws there loses nothing.
    """
    r = model.horizontal_reach
    lo = np.maximum(scene.world_min + model.footprint_radius, np.asarray(grasp_xy) - r)
    hi = np.minimum(scene.world_max - model.footprint_radius, np.asarray(grasp_xy) + r)
    return np.array([lo, hi])


def pose_in_base_frame(g_R, g_p, bases) -> np.ndarray:
    """Arm-frame pose vectors (N, 6) of a world grasp for many bases (N, 3).

    Uses the fact that a base yaw only shifts the grasp's yaw angle.
    """
    bases = np.atleast_2d(bases)
    alpha = geo.matrix_to_rpy(g_R)
    c, s = np.cos(bases[:, 2]), np.sin(bases[:, 2])
    dx = g_p[0] - bases[:, 0]
    dy = g_p[1] - bases[:, 1]
    out = np.empty((len(bases), 6))
    out[:, 0] = c * dx + s * dy
    out[:, 1] = -s * dx + c * dy
    out[:, 2] = g_p[2]
    out[:, 3] = alpha[0]
    out[:, 4] = alpha[1]
    out[:, 5] = geo.wrap_angle(alpha[2] - bases[:, 2])
    return out


@dataclass
class ASRSample:
    base: rb.BaseConfig
    metric: float
    arm: np.ndarray | None = None


def sample_in_asr(scene: sc.Scene, cm, model: rb.RobotModel, t_g, bounds=None,
                  max_samples=DEFAULT_MAX_SAMPLES, mode="cmcl", rng=None, t_obj=None,
                  thres=DEFAULT_THRES, stats: PlanStats | None = None,
                  deadline: float | None = None, arm_seed=None, poly=None) -> ASRSample | None:
    """First valid base placement among ``max_samples`` uniform draws, or None.

    ``bounds`` is a 2 x 2 array of (x, y) limits; headings are drawn from the
    full circle.  In ``cmcl`` mode the metric comes from ``cm`` alone.  In
    ``ikcl`` mode IK is solved per draw and the formation metric uses the real
    object pose ``t_obj`` (ideal direction when omitted); arm self collision and
    arm-vs-obstacle collision are checked.  Draws stop at ``deadline``
    (a ``time.monotonic`` value) if given.  With ``t_obj`` known, bases may
    not stand on the object's ground footprint.  ``arm_seed`` replaces the
    home configuration as the first IK seed.  ``poly`` is the object's ground
    polygon when already known.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    T = t_g if isinstance(t_g, geo.Transform) else geo.to_transform(t_g)
    if bounds is None:
        # default region: the reach disc around the grasp, clipped to the world
        bounds = default_asr_bounds(scene, model, T.p[:2])
        disc = (T.p[:2], model.horizontal_reach)
    else:
        disc = None
    bounds = np.asarray(bounds, dtype=float)
    if np.any(bounds[0] > bounds[1]) or max_samples <= 0:
        return None
    # a grasp out of vertical reach can never be valid
    if abs(T.p[2] - model.reach_center[2]) > model.reach:
        return None
    if poly is None and t_obj is not None:
        poly = sc.object_footprint(scene, geo.Pose6.from_vector(_vec(t_obj)))[0]
    if mode == "cmcl":
        return _asr_cmcl(scene, cm, model, T, bounds, max_samples, rng, thres, stats, poly, disc)
    if mode == "ikcl":
        return _asr_ikcl(scene, model, T, bounds, max_samples, rng, t_obj, thres, stats, deadline,
                         poly, disc, arm_seed)
    raise ValueError(f"unknown mode {mode!r}")


def _draw_bases(rng, bounds, n, disc=None):
    """Uniform bases in the box ``bounds``, or in ``disc = (centre, radius)``.

    Disc draws falling outside ``bounds`` are kept; they fail the world test.
    """
    if disc is None:
        xy = rng.uniform(bounds[0], bounds[1], size=(n, 2))
    else:
        u = rng.random((n, 2))
        r = disc[1] * np.sqrt(u[:, 0])
        a = 2.0 * np.pi * u[:, 1]
        xy = np.asarray(disc[0])[None, :] + np.column_stack([r * np.cos(a), r * np.sin(a)])
    th = rng.uniform(-np.pi, np.pi, size=n)
    return np.column_stack([xy, th])


def bases_blocked(scene, model, xy, poly=None) -> np.ndarray:
    """Base discs that hit obstacles, leave the world or stand under the object."""
    out = sc.discs_in_collision(scene, xy, model.footprint_radius)
    if poly is not None and len(poly) >= 3:
        out |= sc.discs_hit_polygon(xy, model.footprint_radius, poly)
    return out


def _asr_cmcl(scene, cm, model, T, bounds, max_samples, rng, thres, stats, poly=None, disc=None):
    bases = _draw_bases(rng, bounds, max_samples, disc)
    poses = pose_in_base_frame(T.R, T.p, bases)
    vals = cm.query_batch(poses)
    ok = ~np.isnan(vals) & (vals >= thres)
    cand = np.flatnonzero(ok)
    n_used = max_samples
    if cand.size:
        coll = bases_blocked(scene, model, bases[cand, :2], poly)
        free = cand[~coll]
        if free.size:
            i = int(free[0])
            n_used = i + 1
            if stats is not None:
                stats.cm_queries += n_used
            return ASRSample(rb.BaseConfig.from_vector(bases[i]), float(vals[i]))
    if stats is not None:
        stats.cm_queries += n_used
    return None


def _asr_ikcl(scene, model, T, bounds, max_samples, rng, t_obj, thres, stats, deadline=None,
              poly=None, disc=None, arm_seed=None):
    obj_xy = None if t_obj is None else np.asarray(_vec(t_obj))[:2]
    for _ in range(max_samples):
        if deadline is not None and time.monotonic() >= deadline:
            return None
        b = _draw_bases(rng, bounds, 1, disc)[0]
        if bases_blocked(scene, model, b[None, :2], poly)[0]:
            continue
        # the end effector will sit on the grasp, so both alignment angles are
        # known before IK and bound the metric from above (mu <= 1)
        try:
            eb, eo = fm.planar_alignment(b[:2], b[2], T.p[:2], obj_xy)
        except DegenerateProjection:
            continue
        if fm.f_r(float(eb)) * fm.f_r(float(eo)) < thres:
            continue
        pose = pose_in_base_frame(T.R, T.p, b[None, :])[0]
        if stats is not None:
            stats.ik_calls += 1
        sol = rb.solve_ik(model, (geo.rpy_to_matrix(pose[3:]), pose[:3]), seed=arm_seed, rng=rng,
                          restarts=ASR_IK_RESTARTS)
        if not sol.success:
            continue
        q = np.concatenate([b, sol.q])
        try:
            mu = fm.normalized_manipulability(model, q)
            _, p_e = rb.ee_transform(model, q)
            eb, eo = fm.planar_alignment(b[:2], b[2], p_e[:2], obj_xy)
        except DegenerateProjection:
            continue
        f = mu * fm.f_r(float(eb)) * fm.f_r(float(eo))
        if f < thres:
            continue
        if rb.self_collision(model, sol.q) or sc.arm_in_collision(scene, model, q):
            continue
        return ASRSample(rb.BaseConfig.from_vector(b), float(f), sol.q)
    return None


def _vec(t):
    if isinstance(t, geo.Pose6):
        return t.as_vector()
    if isinstance(t, geo.Transform):
        return geo.to_pose(t).as_vector()
    return np.asarray(t, dtype=float)


class Validator:
    """Validity checking bound to one scene, map set, mode and random stream."""

    def __init__(self, scene: sc.Scene, cms, mode="cmcl", rng=None, thres=DEFAULT_THRES,
                 max_samples=DEFAULT_MAX_SAMPLES, stats: PlanStats | None = None,
                 deadline: float | None = None, extra_check=None):
        if mode == "cmcl" and (cms is None or len(cms) != scene.n_robots):
            raise ValueError("cmcl mode needs one capability map per robot")
        self.scene = scene
        self.cms = cms
        self.mode = mode
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.thres = thres
        self.max_samples = max_samples
        self.stats = stats if stats is not None else PlanStats()
        self.deadline = deadline
        self.extra_check = extra_check
        self.last_samples: list = []
        self.arm_seeds: dict = {}  # last accepted arm per robot, warm-starts IK

    def expired(self) -> bool:
        return self.deadline is not None and time.monotonic() >= self.deadline

    def __call__(self, t) -> bool:
        if self.expired():
            return False
        self.stats.valid_checks += 1
        t = _vec(t)
        pose = geo.Pose6.from_vector(t)
        footprint = sc.object_footprint(self.scene, pose)
        if sc.object_in_collision(self.scene, pose, footprint):
            return False
        if self.extra_check is not None and not self.extra_check(pose):
            return False
        if self.mode == "none":
            return True
        samples = []
        for i, T in enumerate(sc.grasp_transforms(self.scene, pose)):
            model = self.scene.robots[i].model
            cm = None if self.cms is None else self.cms[i]
            s = sample_in_asr(self.scene, cm, model, T, None, self.max_samples, self.mode,
                              self.rng, pose, self.thres, self.stats, self.deadline,
                              self.arm_seeds.get(i), footprint[0])
            if s is None:
                return False
            if s.arm is not None:
                self.arm_seeds[i] = s.arm
            samples.append(s)
        self.last_samples = samples
        return True

    def edge(self, a, b, spacing) -> bool:
        """Check interpolated poses strictly between ``a`` and ``b``."""
        return all(self(p) for p in interpolate(a, b, spacing))


def valid_checking(scene: sc.Scene, cms, t_rand, mode="cmcl", rng=None, thres=DEFAULT_THRES,
                   max_samples=DEFAULT_MAX_SAMPLES) -> bool:
    return Validator(scene, cms, mode, rng, thres, max_samples)(t_rand)


# ----------------------------------------------------------------------------
# trees


class Tree:
    def __init__(self, root, capacity=1024):
        self.nodes = np.empty((capacity, 6))
        self.parent = np.empty(capacity, dtype=np.int64)
        self.nodes[0] = root
        self.parent[0] = -1
        self.n = 1

    def add(self, x, parent) -> int:
        if self.n == len(self.nodes):
            self.nodes = np.concatenate([self.nodes, np.empty_like(self.nodes)])
            self.parent = np.concatenate([self.parent, np.empty_like(self.parent)])
        self.nodes[self.n] = x
        self.parent[self.n] = parent
        self.n += 1
        return self.n - 1

    def nearest(self, x) -> int:
        return int(np.argmin(distances(self.nodes[:self.n], x)))

    def path_to(self, i) -> list:
        out = []
        while i >= 0:
            out.append(self.nodes[i].copy())
            i = int(self.parent[i])
        return out[::-1]


def sample_and_extend(tree: Tree, lo, hi, step, rng):
    """Uniform sample in the bounds, nearest node, steer by ``step``.

    Returns (new pose, nearest index, sample).
    """
    x = sample_uniform(rng, lo, hi)
    i = tree.nearest(x)
    return steer(tree.nodes[i], x, step), i, x


class _Clock:
    def __init__(self, budget, max_iterations):
        self.t0 = time.monotonic()
        self.budget = budget
        self.max_iterations = max_iterations
        self.iterations = 0

    @property
    def deadline(self) -> float | None:
        # an iteration cap replaces the wall-clock budget so runs are reproducible
        return None if self.max_iterations is not None else self.t0 + self.budget

    def expired(self) -> bool:
        if self.max_iterations is not None:
            return self.iterations >= self.max_iterations
        return time.monotonic() - self.t0 >= self.budget

    def elapsed(self) -> float:
        return time.monotonic() - self.t0


def _rrt(req, valid, lo, hi, rng, clock, stats):
    start, goal = req.t_start.as_vector(), req.t_goal.as_vector()
    tree = Tree(start)
    half = req.step / 2
    while not clock.expired():
        clock.iterations += 1
        stats.samples += 1
        x = goal if rng.random() < req.goal_bias else sample_uniform(rng, lo, hi)
        i = tree.nearest(x)
        new = steer(tree.nodes[i], x, req.step)
        if not (valid(new) and valid.edge(tree.nodes[i], new, half)):
            continue
        j = tree.add(new, i)
        if distance(new, goal) <= req.step:
            if distance(new, goal) <= req.goal_tol:
                return tree.path_to(j), tree.n
            if valid.edge(new, goal, half):
                k = tree.add(goal, j)
                return tree.path_to(k), tree.n
    return None, tree.n


def _extend(tree, x, step, valid, half):
    i = tree.nearest(x)
    new = steer(tree.nodes[i], x, step)
    if np.array_equal(new, tree.nodes[i]):
        return "reached", i
    if not (valid(new) and valid.edge(tree.nodes[i], new, half)):
        return "trapped", None
    j = tree.add(new, i)
    return ("reached" if distance(new, x) <= 1e-12 else "advanced"), j


def _connect(tree, x, step, valid, half, clock):
    while True:
        status, j = _extend(tree, x, step, valid, half)
        if status != "advanced" or clock.expired():
            return status, j


def _rrtconnect(req, valid, lo, hi, rng, clock, stats):
    start, goal = req.t_start.as_vector(), req.t_goal.as_vector()
    ta, tb = Tree(start), Tree(goal)
    a_is_start = True
    half = req.step / 2
    while not clock.expired():
        clock.iterations += 1
        stats.samples += 1
        x = sample_uniform(rng, lo, hi)
        status, j = _extend(ta, x, req.step, valid, half)
        if status != "trapped":
            new = ta.nodes[j]
            cstatus, k = _connect(tb, new, req.step, valid, half, clock)
            if cstatus == "reached":
                pa, pb = ta.path_to(j), tb.path_to(k)
                path = pa + pb[::-1][1:] if a_is_start else pb + pa[::-1][1:]
                return path, ta.n + tb.n
        ta, tb = tb, ta
        a_is_start = not a_is_start
    return None, ta.n + tb.n


def _prm(req, valid, lo, hi, rng, clock, stats):
    start, goal = req.t_start.as_vector(), req.t_goal.as_vector()
    nodes = [start, goal]
    adj = {0: {}, 1: {}}
    half = req.step / 2

    def link(i):
        arr = np.asarray(nodes[:-1]) if i == len(nodes) - 1 else np.asarray(nodes)
        d = distances(arr, nodes[i])
        order = [j for j in np.argsort(d, kind="stable") if j != i][:PRM_NEIGHBORS]
        for j in order:
            if clock.expired():
                return
            if valid.edge(nodes[i], nodes[j], half):
                adj[i][j] = adj[j][i] = float(d[j])

    link(1)
    while not clock.expired():
        clock.iterations += 1
        stats.samples += 1
        x = sample_uniform(rng, lo, hi)
        if not valid(x):
            continue
        nodes.append(x)
        adj[len(nodes) - 1] = {}
        link(len(nodes) - 1)
    # A* on the roadmap
    goal_v = nodes[1]
    g = {0: 0.0}
    prev = {}
    heap = [(distance(nodes[0], goal_v), 0)]
    closed = set()
    while heap:
        _, u = heapq.heappop(heap)
        if u in closed:
            continue
        if u == 1:
            path = [1]
            while path[-1] in prev:
                path.append(prev[path[-1]])
            return [nodes[i].copy() for i in path[::-1]], len(nodes)
        closed.add(u)
        for v, w in sorted(adj[u].items()):
            nd = g[u] + w
            if nd < g.get(v, np.inf):
                g[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd + distance(nodes[v], goal_v), v))
    return None, len(nodes)


_BACKENDS = {"rrt": _rrt, "rrtconnect": _rrtconnect, "prm": _prm}


def plan(scene: sc.Scene, cms, request: PlanRequest, extra_check=None) -> PlanResult:
    """Plan an object path from ``request.t_start`` to ``request.t_goal``.

    ``extra_check(pose) -> bool`` adds a further validity condition, checked
    after object collision and before the per-robot checks.
    """
    stats = PlanStats()
    rng = np.random.default_rng(request.seed)
    clock = _Clock(request.budget, request.max_iterations)
    valid = Validator(scene, cms, request.mode, rng, request.thres, request.max_samples, stats,
                      deadline=clock.deadline, extra_check=extra_check)
    lo, hi = scene.bounds_lo, scene.bounds_hi
    # a false negative at an endpoint ends the query, so endpoints get more draws
    valid.max_samples = max(request.max_samples, request.endpoint_samples)
    for t, status in ((request.t_goal, INVALID_GOAL), (request.t_start, INVALID_START)):
        if not valid(t):
            stats.wall_time = clock.elapsed()
            return PlanResult(status, None, stats)
    valid.max_samples = request.max_samples
    raw, stats.nodes = _BACKENDS[request.planner](request, valid, lo, hi, rng, clock, stats)
    if raw is None:
        stats.wall_time = clock.elapsed()
        return PlanResult(TIMEOUT, None, stats)
    path = ObjectPath(np.array(raw))
    path = postprocess_path(path, scene, cms, request.mode, step=request.step, rng=rng,
                            validator=valid, smooth=request.smooth, speed=request.object_speed)
    stats.wall_time = clock.elapsed()
    return PlanResult(SUCCESS, path, stats, {"raw_waypoints": len(raw)})


# ----------------------------------------------------------------------------
# post-processing


def subdivide(waypoints, step) -> np.ndarray:
    """Insert poses so consecutive waypoints are at most ``step`` apart.

    Inserted poses are every other point of the ``step / 2`` edge partition,
    i.e. poses that edge validation has already checked.
    """
    w = np.asarray(waypoints, dtype=float)
    out = [w[0]]
    for a, b in zip(w[:-1], w[1:]):
        out.extend(interpolate(a, b, step / 2)[1::2])
        out.append(b)
    return np.array(out)


def time_parameterize(waypoints, speed) -> np.ndarray:
    w = np.asarray(waypoints, dtype=float)
    return np.array([distance(w[i], w[i + 1]) / speed for i in range(len(w) - 1)])


def shortcut(waypoints, validator, spacing, rng, attempts=SHORTCUT_ATTEMPTS) -> np.ndarray:
    w = [np.asarray(p, dtype=float) for p in waypoints]
    for _ in range(attempts):
        if len(w) < 3:
            break
        i, j = sorted(rng.choice(len(w), size=2, replace=False))
        if j - i < 2:
            continue
        if validator.edge(w[i], w[j], spacing):
            w = w[:i + 1] + w[j:]
    return np.array(w)


def postprocess_path(path: ObjectPath, scene: sc.Scene, cms, mode="cmcl", step=DEFAULT_STEP,
                     rng=None, validator=None, smooth=True, speed=DEFAULT_OBJECT_SPEED,
                     attempts=SHORTCUT_ATTEMPTS) -> ObjectPath:
    """Shortcut smoothing, subdivision to ``step`` and constant-speed timing."""
    if rng is None:
        rng = np.random.default_rng(0)
    if validator is None:
        validator = Validator(scene, cms, mode, rng)
    w = path.waypoints
    if smooth and len(w) > 2:
        w = shortcut(w, validator, step / 2, rng, attempts)
    w = subdivide(w, step)
    return ObjectPath(w, time_parameterize(w, speed))
