"""2.5-D world: height grid, object box, grasp frames and collision queries.

The grid stores one obstacle height per cell (0 = free).  Rows run along +y and
columns along +x; cell ``(r, c)`` covers
``[ox + c*s, ox + (c+1)*s] x [oy + r*s, oy + (r+1)*s]``.

Bases never enter an occupied cell.  The object collides with a cell only when
the cell height reaches the object's lowest point, so a high enough object can
pass over low obstacles while the robots route around them.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path

import numpy as np

from . import geometry as geo
from . import robot as rb
from .errors import ParseError, VersionMismatch

SCENE_FORMAT_VERSION = 1
DATA_DIR = Path(__file__).resolve().parent / "data"
AXES = ("x", "y", "z", "roll", "pitch", "yaw")


@dataclass(frozen=True)
class ObjectSpec:
    half_extents: tuple

    def __post_init__(self):
        he = tuple(float(v) for v in self.half_extents)
        if len(he) != 3 or min(he) <= 0:
            raise ValueError("half_extents must be three positive numbers")
        object.__setattr__(self, "half_extents", he)

    @cached_property
    def corners(self) -> np.ndarray:
        hx, hy, hz = self.half_extents
        s = np.array([[i, j, k] for i in (-1, 1) for j in (-1, 1) for k in (-1, 1)], dtype=float)
        return s * np.array([hx, hy, hz])


@dataclass(frozen=True, eq=False)
class GraspSpec:
    """Grasp frame expressed in the object frame."""

    xyz: tuple
    rpy: tuple

    @cached_property
    def transform(self) -> geo.Transform:
        return geo.Transform(geo.rpy_to_matrix(self.rpy), self.xyz)

    def __eq__(self, other):
        return isinstance(other, GraspSpec) and tuple(self.xyz) == tuple(other.xyz) and tuple(
            self.rpy) == tuple(other.rpy)


@dataclass(eq=False)
class RobotEntry:
    model_ref: str
    model: rb.RobotModel
    grasp: GraspSpec


@dataclass(eq=False)
class Scene:
    name: str
    cell_size: float
    origin: np.ndarray
    heights: np.ndarray
    bounds_lo: np.ndarray
    bounds_hi: np.ndarray
    obj: ObjectSpec
    robots: list
    start: geo.Pose6 | None = None
    goal: geo.Pose6 | None = None
    budget: float | None = None
    meta: dict = field(default_factory=dict)
    base_dir: Path | None = None

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float).reshape(2)
        self.heights = np.asarray(self.heights, dtype=float)
        self.heights.setflags(write=False)
        self.bounds_lo = np.asarray(self.bounds_lo, dtype=float)
        self.bounds_hi = np.asarray(self.bounds_hi, dtype=float)
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        if self.heights.ndim != 2 or np.any(self.heights < 0):
            raise ValueError("heights must be a 2-D array of non-negative values")
        if np.any(self.bounds_lo > self.bounds_hi):
            raise ValueError("object sampling bounds must be nonempty intervals")

    @property
    def n_robots(self) -> int:
        return len(self.robots)

    @property
    def models(self) -> list:
        return [r.model for r in self.robots]

    @property
    def shape(self):
        return self.heights.shape

    @property
    def world_min(self) -> np.ndarray:
        return self.origin.copy()

    @property
    def world_max(self) -> np.ndarray:
        rows, cols = self.heights.shape
        return self.origin + self.cell_size * np.array([cols, rows])

    @cached_property
    def occupied(self) -> np.ndarray:
        return self.heights > 0

    @cached_property
    def max_height(self) -> float:
        return float(self.heights.max()) if self.heights.size else 0.0

    def height_at(self, xy) -> np.ndarray:
        """Obstacle height under ground points (N, 2); 0 outside the grid."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        c = np.floor((xy[:, 0] - self.origin[0]) / self.cell_size).astype(np.int64)
        r = np.floor((xy[:, 1] - self.origin[1]) / self.cell_size).astype(np.int64)
        rows, cols = self.heights.shape
        inside = (r >= 0) & (r < rows) & (c >= 0) & (c < cols)
        out = np.zeros(len(xy))
        out[inside] = self.heights[r[inside], c[inside]]
        return out


# ----------------------------------------------------------------------------
# grasps


def grasp_transforms(scene: Scene, t_obj) -> list:
    T = t_obj if isinstance(t_obj, geo.Transform) else geo.to_transform(_as_pose(t_obj))
    return [geo.compose(T, r.grasp.transform) for r in scene.robots]


def grasp_poses(scene: Scene, t_obj) -> list:
    """World-frame grasp poses for an object pose, one per robot."""
    return [geo.to_pose(T) for T in grasp_transforms(scene, t_obj)]


def _as_pose(t):
    if isinstance(t, geo.Pose6):
        return t
    return geo.Pose6.from_vector(t)


# ----------------------------------------------------------------------------
# collision queries


def in_world(scene: Scene, xy, margin=0.0) -> np.ndarray:
    xy = np.atleast_2d(xy)
    lo, hi = scene.world_min + margin, scene.world_max - margin
    return np.all((xy >= lo) & (xy <= hi), axis=1)


@lru_cache(maxsize=16)
def _window_offsets(k):
    off = np.arange(-k, k + 1)
    dc, dr = np.meshgrid(off, off, indexing="xy")
    return dc.ravel(), dr.ravel()


def discs_in_collision(scene: Scene, xy, radius) -> np.ndarray:
    """Vectorised base test for disc centres (N, 2).

    A disc collides when it leaves the world or its interior overlaps an
    occupied cell (tangency does not count).
    """
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    s = scene.cell_size
    k = int(np.ceil(radius / s)) + 1
    if len(xy) == 1:
        # single disc: skip the exact test when its cell window is empty
        x, y = float(xy[0, 0]), float(xy[0, 1])
        lo, hi = scene.world_min + radius, scene.world_max - radius
        if not (lo[0] <= x <= hi[0] and lo[1] <= y <= hi[1]):
            return np.array([True])
        c0 = math.floor((x - scene.origin[0]) / s)
        r0 = math.floor((y - scene.origin[1]) / s)
        if not scene.occupied[max(r0 - k, 0):r0 + k + 1, max(c0 - k, 0):c0 + k + 1].any():
            return np.array([False])
    out = ~in_world(scene, xy, margin=radius)
    check = np.flatnonzero(~out)
    if check.size == 0 or not scene.occupied.any():
        return out
    dc, dr = _window_offsets(k)
    pts = xy[check]
    c0 = np.floor((pts[:, 0] - scene.origin[0]) / s).astype(np.int64)
    r0 = np.floor((pts[:, 1] - scene.origin[1]) / s).astype(np.int64)
    cc = c0[:, None] + dc[None, :]
    rr = r0[:, None] + dr[None, :]
    rows, cols = scene.heights.shape
    valid = (rr >= 0) & (rr < rows) & (cc >= 0) & (cc < cols)
    occ = np.zeros(cc.shape, dtype=bool)
    occ[valid] = scene.occupied[rr[valid], cc[valid]]
    x0 = scene.origin[0] + cc * s
    y0 = scene.origin[1] + rr * s
    px = np.clip(pts[:, 0:1], x0, x0 + s)
    py = np.clip(pts[:, 1:2], y0, y0 + s)
    d2 = (px - pts[:, 0:1]) ** 2 + (py - pts[:, 1:2]) ** 2
    hit = np.any(occ & (d2 < radius * radius), axis=1)
    out[check] = hit
    return out


def base_in_collision(scene: Scene, q_b, footprint_radius: float) -> bool:
    if isinstance(q_b, rb.BaseConfig):
        xy = (q_b.x, q_b.y)
    else:
        xy = (q_b[0], q_b[1])
    return bool(discs_in_collision(scene, np.array([xy]), footprint_radius)[0])


def object_vertices(scene: Scene, t_obj) -> np.ndarray:
    T = t_obj if isinstance(t_obj, geo.Transform) else geo.to_transform(_as_pose(t_obj))
    return T.apply(scene.obj.corners)


def convex_hull_2d(points) -> np.ndarray:
    """Counter-clockwise convex hull (monotone chain); collinear points dropped."""
    # small inputs, so plain Python beats numpy set operations here
    pts = sorted(set(map(tuple, np.round(np.asarray(points, dtype=float), 12).tolist())))
    if len(pts) <= 2:
        return np.array(pts, dtype=float).reshape(-1, 2)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def polygon_hits_cells(scene: Scene, poly, mask) -> bool:
    """True when the convex polygon's interior overlaps any cell selected by ``mask``."""
    poly = np.asarray(poly, dtype=float)
    s = scene.cell_size
    lo = poly.min(axis=0)
    hi = poly.max(axis=0)
    rows, cols = scene.heights.shape
    c_lo = max(int(np.floor((lo[0] - scene.origin[0]) / s)), 0)
    c_hi = min(int(np.floor((hi[0] - scene.origin[0]) / s)), cols - 1)
    r_lo = max(int(np.floor((lo[1] - scene.origin[1]) / s)), 0)
    r_hi = min(int(np.floor((hi[1] - scene.origin[1]) / s)), rows - 1)
    if c_lo > c_hi or r_lo > r_hi:
        return False
    sub = mask[r_lo:r_hi + 1, c_lo:c_hi + 1]
    if not sub.any():
        return False
    rr, cc = np.nonzero(sub)
    x0 = scene.origin[0] + (cc + c_lo) * s
    y0 = scene.origin[1] + (rr + r_lo) * s
    # separating axis test: cell axes first, then polygon edge normals
    ok = (x0 < hi[0]) & (x0 + s > lo[0]) & (y0 < hi[1]) & (y0 + s > lo[1])
    if len(poly) >= 3:
        edges = np.roll(poly, -1, axis=0) - poly
        normals = np.stack([edges[:, 1], -edges[:, 0]], axis=1)
        pp = poly @ normals.T
        pmin, pmax = pp.min(axis=0), pp.max(axis=0)
        corners = np.stack(
            [np.stack([x0, y0], 1), np.stack([x0 + s, y0], 1),
             np.stack([x0, y0 + s], 1), np.stack([x0 + s, y0 + s], 1)], axis=1
        )
        cp = corners @ normals.T  # (M, 4, E)
        cmin, cmax = cp.min(axis=1), cp.max(axis=1)
        ok &= np.all((cmin < pmax) & (cmax > pmin), axis=1)
    return bool(ok.any())


def object_footprint(scene: Scene, t_obj) -> tuple:
    """(convex ground polygon, bottom z) of the object box at ``t_obj``."""
    v = object_vertices(scene, t_obj)
    return convex_hull_2d(v[:, :2]), float(v[:, 2].min())


def discs_hit_polygon(xy, radius, poly) -> np.ndarray:
    """Which discs (N, 2) overlap the interior of a convex CCW polygon."""
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    if len(xy) == 1:
        return np.array([_disc_hits_polygon(float(xy[0, 0]), float(xy[0, 1]), radius,
                                            np.asarray(poly, dtype=float).tolist())])
    poly = np.asarray(poly, dtype=float)
    a = poly
    b = np.roll(poly, -1, axis=0)
    e = b - a
    rel = xy[:, None, :] - a[None, :, :]
    cross = e[None, :, 0] * rel[..., 1] - e[None, :, 1] * rel[..., 0]
    inside = np.all(cross > 0, axis=1)
    ee = np.maximum(np.einsum("ij,ij->i", e, e), 1e-300)
    s = np.clip(np.einsum("nij,ij->ni", rel, e) / ee, 0.0, 1.0)
    closest = a[None] + s[..., None] * e[None]
    d2 = np.sum((xy[:, None, :] - closest) ** 2, axis=2)
    return inside | np.any(d2 < radius * radius, axis=1)


def _disc_hits_polygon(x, y, radius, poly) -> bool:
    """Scalar form of :func:`discs_hit_polygon` for one disc."""
    inside = True
    r2 = radius * radius
    for (ax, ay), (bx, by) in zip(poly, poly[1:] + poly[:1]):
        ex, ey = bx - ax, by - ay
        rx, ry = x - ax, y - ay
        if not ex * ry - ey * rx > 0:
            inside = False
        t = min(max((rx * ex + ry * ey) / max(ex * ex + ey * ey, 1e-300), 0.0), 1.0)
        cx, cy = ax + t * ex, ay + t * ey
        if (x - cx) ** 2 + (y - cy) ** 2 < r2:
            return True
    return inside


def object_in_collision(scene: Scene, t_obj, footprint=None) -> bool:
    """Object box vs the height grid.

    The box's ground footprint is tested against cells whose height reaches
    the box's lowest vertex; leaving the world also counts as collision.
    ``footprint`` is a precomputed :func:`object_footprint` result.
    """
    poly, bottom = object_footprint(scene, t_obj) if footprint is None else footprint
    if not np.all(in_world(scene, poly)):
        return True
    return polygon_hits_cells(scene, poly, scene.heights >= bottom)


def points_in_collision(scene: Scene, pts) -> bool:
    """True when any 3-D point lies at or below the obstacle height of its cell, or underground."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    h = scene.height_at(pts[:, :2])
    return bool(np.any((pts[:, 2] <= h) & (h > 0)) or np.any(pts[:, 2] < 0))


def arm_in_collision(scene: Scene, model: rb.RobotModel, q) -> bool:
    q = rb._as_qvec(q)
    pts = rb.link_points(model, q[3:], base=q[:3], skip_links=1)
    return points_in_collision(scene, pts)


# ----------------------------------------------------------------------------
# nominal formation


def nominal_bases(scene: Scene, t_obj) -> np.ndarray:
    """Idealised base poses (n, 3): each base stands ``standoff`` behind its grasp.

    "Behind" is opposite the horizontal direction of the grasp's x axis, which
    points from the grasp towards the object.
    """
    out = []
    for r, T in zip(scene.robots, grasp_transforms(scene, t_obj)):
        d = T.R[:2, 0]
        nd = np.hypot(*d)
        if nd < 1e-9:
            d = T.p[:2] - np.asarray(_as_pose(t_obj).p)[:2]
            nd = np.hypot(*d)
        d = d / nd
        xy = T.p[:2] - r.model.standoff * d
        out.append([xy[0], xy[1], np.arctan2(d[1], d[0])])
    return np.array(out)


# ----------------------------------------------------------------------------
# file I/O


def _pair(v, where):
    try:
        lo, hi = (float(x) for x in v)
    except (TypeError, ValueError) as exc:
        raise ParseError("expected [low, high]", field=where) from exc
    if lo > hi:
        raise ParseError("empty interval", field=where)
    return lo, hi


def _vec(v, n, where):
    try:
        out = [float(x) for x in v]
    except (TypeError, ValueError) as exc:
        raise ParseError(f"expected {n} numbers", field=where) from exc
    if len(out) != n:
        raise ParseError(f"expected {n} numbers", field=where)
    return out


def resolve_model(ref: str, base_dir: Path | None) -> tuple:
    """Locate a model file: relative to the scene, then bundled models."""
    cands = []
    if base_dir is not None:
        cands.append(Path(base_dir) / ref)
    cands.append(DATA_DIR / "models" / ref)
    cands.append(Path(ref))
    for c in cands:
        if c.is_file():
            return rb.load_model(c), c
    raise ParseError(f"model file {ref!r} not found", field="robots.model")


def scene_from_dict(d: dict, base_dir=None) -> Scene:
    version = d.get("format_version")
    if version is None:
        raise ParseError("missing format_version", field="format_version")
    if version != SCENE_FORMAT_VERSION:
        raise VersionMismatch(f"scene format_version {version}, expected {SCENE_FORMAT_VERSION}")
    g = d.get("grid", {})
    cell = g.get("cell_size", 0.1)
    if not isinstance(cell, (int, float)) or not cell > 0:
        raise ParseError("cell_size must be positive", field="grid.cell_size")
    origin = _vec(g.get("origin", [0.0, 0.0]), 2, "grid.origin")
    if "heights" in g:
        try:
            heights = np.array(g["heights"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise ParseError("heights must be numeric", field="grid.heights") from exc
        if "shape" in g:
            shape = tuple(int(v) for v in g["shape"])
            if heights.size != shape[0] * shape[1]:
                raise ParseError("heights size does not match shape", field="grid.heights")
            heights = heights.reshape(shape)
        if heights.ndim != 2:
            raise ParseError("heights must be 2-D or come with a shape", field="grid.heights")
    else:
        shape = g.get("shape")
        if shape is None:
            raise ParseError("grid needs heights or shape", field="grid.shape")
        heights = np.zeros((int(shape[0]), int(shape[1])))
    heights = heights.copy()
    for i, ob in enumerate(g.get("obstacles", [])):
        where = f"grid.obstacles[{i}]"
        x0, y0, x1, y1 = _vec(ob.get("rect"), 4, f"{where}.rect")
        h = float(ob.get("height", 0.0))
        if h < 0:
            raise ParseError("height must be non-negative", field=f"{where}.height")
        c0 = int(np.floor((min(x0, x1) - origin[0]) / cell + 1e-9))
        c1 = int(np.ceil((max(x0, x1) - origin[0]) / cell - 1e-9))
        r0 = int(np.floor((min(y0, y1) - origin[1]) / cell + 1e-9))
        r1 = int(np.ceil((max(y0, y1) - origin[1]) / cell - 1e-9))
        rows, cols = heights.shape
        sl = heights[max(r0, 0):min(r1, rows), max(c0, 0):min(c1, cols)]
        np.maximum(sl, h, out=sl)
    if np.any(heights < 0):
        raise ParseError("heights must be non-negative", field="grid.heights")
    bd = d.get("bounds", {})
    rows, cols = heights.shape
    default = {
        "x": (origin[0], origin[0] + cols * cell),
        "y": (origin[1], origin[1] + rows * cell),
        "z": (0.0, 2.0),
        "roll": (0.0, 0.0),
        "pitch": (0.0, 0.0),
        "yaw": (-np.pi, np.pi),
    }
    lo, hi = [], []
    for ax in AXES:
        a, b = _pair(bd[ax], f"bounds.{ax}") if ax in bd else default[ax]
        lo.append(a)
        hi.append(b)
    od = d.get("object", {})
    he = _vec(od.get("half_extents", [0.5, 0.3, 0.02]), 3, "object.half_extents")
    if min(he) <= 0:
        raise ParseError("half_extents must be positive", field="object.half_extents")
    robots = []
    for i, rd in enumerate(d.get("robots", [])):
        ref = rd.get("model", "ref6.json")
        model, _ = resolve_model(ref, base_dir)
        gd = rd.get("grasp", {})
        grasp = GraspSpec(tuple(_vec(gd.get("xyz", [0, 0, 0]), 3, f"robots[{i}].grasp.xyz")),
                          tuple(_vec(gd.get("rpy", [0, 0, 0]), 3, f"robots[{i}].grasp.rpy")))
        robots.append(RobotEntry(ref, model, grasp))
    start = d.get("start")
    goal = d.get("goal")
    known = {"format_version", "name", "grid", "bounds", "object", "robots", "start", "goal", "budget"}
    return Scene(
        name=str(d.get("name", "scene")),
        cell_size=float(cell),
        origin=origin,
        heights=heights,
        bounds_lo=lo,
        bounds_hi=hi,
        obj=ObjectSpec(he),
        robots=robots,
        start=None if start is None else geo.Pose6.from_vector(_vec(start, 6, "start")),
        goal=None if goal is None else geo.Pose6.from_vector(_vec(goal, 6, "goal")),
        budget=None if d.get("budget") is None else float(d["budget"]),
        meta={k: v for k, v in d.items() if k not in known},
        base_dir=None if base_dir is None else Path(base_dir),
    )


def scene_to_dict(scene: Scene) -> dict:
    d = {"format_version": SCENE_FORMAT_VERSION, "name": scene.name}
    d.update(scene.meta)
    d["grid"] = {
        "cell_size": scene.cell_size,
        "origin": scene.origin.tolist(),
        "shape": list(scene.heights.shape),
        "heights": scene.heights.ravel().tolist(),
    }
    d["bounds"] = {ax: [float(a), float(b)] for ax, a, b in zip(AXES, scene.bounds_lo, scene.bounds_hi)}
    d["object"] = {"half_extents": list(scene.obj.half_extents)}
    d["robots"] = [
        {"model": r.model_ref, "grasp": {"xyz": list(r.grasp.xyz), "rpy": list(r.grasp.rpy)}}
        for r in scene.robots
    ]
    if scene.start is not None:
        d["start"] = scene.start.as_vector().tolist()
    if scene.goal is not None:
        d["goal"] = scene.goal.as_vector().tolist()
    if scene.budget is not None:
        d["budget"] = scene.budget
    return d


def load_scene(path) -> Scene:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(d, dict):
        raise ParseError("scene document must be a JSON object", line=1)
    return scene_from_dict(d, base_dir=path.parent)


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=1) + "\n")


def bundled_scene_paths() -> list:
    return sorted((DATA_DIR / "scenes").glob("*.json"))
