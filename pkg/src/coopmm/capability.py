"""Capability map: discretised arm-frame end-effector poses -> formation metric.

Keys are integer multiples of the translation resolution (x, y, z) and the
rotation resolution (roll, pitch, yaw).  A query rounds each coordinate to the
nearest multiple and returns the stored metric, or ``None``/NaN when the cell
is empty.  Values live in a dense float32 array with NaN for empty cells.

File layout (little endian)::

    magic      8 bytes  b"COOPCM\\x00\\x01"
    version    uint32
    meta_len   uint32, then meta_len bytes of UTF-8 JSON metadata
    count      uint64
    entries    count x 7 float32 (x, y, z, roll, pitch, yaw, value)
    checksum   32 bytes SHA-256 of everything above
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import formation as fm
from . import geometry as geo
from . import robot as rb
from .errors import (
    ChecksumMismatch,
    EmptyMap,
    FormatError,
    InvalidResolution,
    UncalibratedModel,
    VersionMismatch,
)

log = logging.getLogger(__name__)

MAGIC = b"COOPCM\x00\x01"
CM_FORMAT_VERSION = 1
CONSTRUCTION_RESTARTS = 4


def _angle_period(res_r):
    """Number of cells per turn when res_r divides 2*pi, else None."""
    n = 2.0 * np.pi / res_r
    k = int(round(n))
    return k if abs(n - k) < 1e-9 else None


def round_index(values, res):
    """Nearest multiple index, ties rounded up (0.51 / 0.1 -> 5)."""
    return np.floor(np.asarray(values, dtype=float) / res + 0.5).astype(np.int64)


@dataclass
class CapabilityMap:
    res_t: float
    res_r: float
    thres: float
    values: np.ndarray  # float32, 6-D, NaN = empty
    origin: np.ndarray  # integer index of values[0, 0, 0, 0, 0, 0]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.int64)
        self._period = _angle_period(self.res_r)
        self._shape = np.array(self.values.shape, dtype=np.int64)
        self._count = int(np.count_nonzero(~np.isnan(self.values)))

    # -- keys -----------------------------------------------------------------
    def key_indices(self, poses) -> np.ndarray:
        """Integer key indices (N, 6) for pose vectors (N, 6)."""
        poses = np.atleast_2d(np.asarray(poses, dtype=float))
        idx = np.empty(poses.shape, dtype=np.int64)
        idx[:, :3] = round_index(poses[:, :3], self.res_t)
        idx[:, 3:] = round_index(geo.wrap_angle(poses[:, 3:]), self.res_r)
        if self._period is not None:
            half = self._period // 2
            for k in (3, 5):
                # roll and yaw are periodic; keep indices in (-half, half]
                idx[:, k] = np.mod(idx[:, k] + half - 1, self._period) - half + 1
        return idx

    def key_coordinates(self, idx) -> np.ndarray:
        idx = np.atleast_2d(idx)
        out = np.empty(idx.shape, dtype=float)
        out[:, :3] = idx[:, :3] * self.res_t
        out[:, 3:] = idx[:, 3:] * self.res_r
        return out

    # -- queries --------------------------------------------------------------
    def query_batch(self, poses) -> np.ndarray:
        """Stored metric per pose (N,), NaN where nothing is stored."""
        idx = self.key_indices(poses) - self.origin
        inside = np.all((idx >= 0) & (idx < self._shape), axis=1)
        out = np.full(len(idx), np.nan)
        if inside.any():
            j = idx[inside]
            out[inside] = self.values[j[:, 0], j[:, 1], j[:, 2], j[:, 3], j[:, 4], j[:, 5]]
        return out

    def query(self, pose) -> float | None:
        """Stored metric for one pose, or None; same keys as :meth:`query_batch`."""
        if isinstance(pose, geo.Pose6):
            pose = pose.as_vector()
        v = [float(x) for x in pose]
        idx = []
        for k in range(6):
            x = v[k]
            if k < 3:
                i = math.floor(x / self.res_t + 0.5)
            else:
                if not -math.pi < x <= math.pi:
                    x = math.pi - (math.pi - x) % geo.TWO_PI
                    if x <= -math.pi:
                        x += geo.TWO_PI
                i = math.floor(x / self.res_r + 0.5)
                if self._period is not None and k != 4:
                    half = self._period // 2
                    i = (i + half - 1) % self._period - half + 1
            i -= int(self.origin[k])
            if not 0 <= i < self._shape[k]:
                return None
            idx.append(i)
        out = float(self.values[tuple(idx)])
        return None if math.isnan(out) else out

    # -- contents -------------------------------------------------------------
    @property
    def entry_count(self) -> int:
        return self._count

    def entries(self):
        """(keys (N, 6) float, values (N,) float32) in C order of the grid."""
        nz = np.argwhere(~np.isnan(self.values))
        vals = self.values[tuple(nz.T)]
        return self.key_coordinates(nz + self.origin), vals

    def entry_indices(self):
        nz = np.argwhere(~np.isnan(self.values))
        return nz + self.origin, self.values[tuple(nz.T)]


def query_cm(cm: CapabilityMap, pose_eb) -> float | None:
    """Stored metric for an arm-frame end-effector pose, or None."""
    return cm.query(pose_eb)


def _from_sparse(res_t, res_r, thres, idx, vals, meta) -> CapabilityMap:
    if len(idx) == 0:
        values = np.full((0,) * 6, np.nan, dtype=np.float32)
        return CapabilityMap(res_t, res_r, thres, values, np.zeros(6, dtype=np.int64), meta)
    lo = idx.min(axis=0)
    hi = idx.max(axis=0)
    values = np.full(tuple(hi - lo + 1), np.nan, dtype=np.float32)
    j = idx - lo
    values[tuple(j.T)] = vals
    return CapabilityMap(res_t, res_r, thres, values, lo, meta)


# ----------------------------------------------------------------------------
# construction


@dataclass
class CMBuildParams:
    res_t: float = 0.1
    res_r: float = np.pi / 8
    thres: float = 0.4
    roll_range: tuple = (-np.pi / 8, np.pi / 8)
    pitch_range: tuple = (-np.pi / 8, np.pi / 8)
    z_range: tuple | None = None
    seed: int = 0


def _grid_indices(lo, hi, res):
    return np.arange(math.ceil(lo / res - 1e-9), math.floor(hi / res + 1e-9) + 1)


def construct_cm(model: rb.RobotModel, res_t=0.1, res_r=np.pi / 8, thres=0.4,
                 roll_range=(-np.pi / 8, np.pi / 8), pitch_range=(-np.pi / 8, np.pi / 8),
                 z_range=None, seed=0, progress=None) -> CapabilityMap:
    """Build a capability map for ``model``.

    Every grid position inside the arm's reach sphere is paired with every grid
    orientation inside ``roll_range`` x ``pitch_range`` x full yaw.  Each pose is
    solved with batched IK; orientations are visited in yaw order so each solve
    warm-starts from the previous orientation's solution at the same position,
    with CONSTRUCTION_RESTARTS random restarts on failure.  Self-colliding
    solutions and metric values below ``thres`` are dropped.  The stored metric
    is ``mu * f_r(theta_eb)``; the object-direction angle is taken as ideal.
    """
    if not (res_t > 0 and res_r > 0) or not (np.isfinite(res_t) and np.isfinite(res_r)):
        raise InvalidResolution(f"resolutions must be positive, got {res_t}, {res_r}")
    if not 0 < thres < 1:
        raise ValueError(f"thres must lie in (0, 1), got {thres}")
    if model.omega_max is None:
        raise UncalibratedModel(f"model {model.name!r} has no omega_max")
    rng = np.random.default_rng(seed)

    c = model.reach_center
    R = model.reach
    if z_range is None:
        z_range = (max(c[2] - R, 0.0), c[2] + R)
    ix = _grid_indices(c[0] - R, c[0] + R, res_t)
    iy = _grid_indices(c[1] - R, c[1] + R, res_t)
    iz = _grid_indices(z_range[0], z_range[1], res_t)
    G = np.stack(np.meshgrid(ix, iy, iz, indexing="ij"), axis=-1).reshape(-1, 3)
    P = G * res_t
    keep = np.linalg.norm(P - c, axis=1) <= R
    r_xy = np.hypot(P[:, 0], P[:, 1])
    keep &= r_xy > 1e-9
    # mu <= 1, so positions whose bearing penalty alone is below thres are skipped
    bearing = np.abs(np.arctan2(P[:, 1], P[:, 0]))
    bearing_pen = fm.f_r(bearing)
    keep &= bearing_pen >= thres
    G, P, bearing_pen = G[keep], P[keep], bearing_pen[keep]

    period = _angle_period(res_r)
    if period is not None:
        half = period // 2
        iyaw = np.arange(-half + 1, half + 1)
    else:
        iyaw = _grid_indices(-np.pi, np.pi, res_r)
    iroll = _grid_indices(*roll_range, res_r)
    ipitch = _grid_indices(*pitch_range, res_r)
    n_pos = len(P)
    home = np.tile(model.home_config, (n_pos, 1))
    out_idx, out_val = [], []
    total = len(iroll) * len(ipitch) * len(iyaw)
    done = 0
    for a in iroll:
        for b in ipitch:
            prev_q, prev_ok = home, np.zeros(n_pos, dtype=bool)
            for g in iyaw:
                Rt = geo.rpy_to_matrix(np.array([a, b, g]) * res_r)
                Rb = np.broadcast_to(Rt, (n_pos, 3, 3))
                seeds = np.where(prev_ok[:, None], prev_q, home)
                q, ok = rb.solve_ik_batch(model, Rb, P, seeds)
                for _ in range(CONSTRUCTION_RESTARTS):
                    fail = np.flatnonzero(~ok)
                    if fail.size == 0:
                        break
                    qr, okr = rb.solve_ik_batch(
                        model, Rb[fail], P[fail], model.random_arm(rng, fail.size)
                    )
                    q[fail[okr]] = qr[okr]
                    ok[fail[okr]] = True
                prev_q, prev_ok = q, ok
                sel = np.flatnonzero(ok)
                if sel.size:
                    good = ~rb.self_collision(model, q[sel])
                    sel = sel[good]
                if sel.size:
                    mu = fm.normalized_manipulability_batch(model, q[sel])
                    val = mu * bearing_pen[sel]
                    store = val >= thres
                    sel, val = sel[store], val[store]
                    key = np.empty((sel.size, 6), dtype=np.int64)
                    key[:, :3] = G[sel]
                    key[:, 3:] = (a, b, g)
                    out_idx.append(key)
                    out_val.append(val.astype(np.float32))
                done += 1
                if progress is not None:
                    progress(done, total)
    idx = np.concatenate(out_idx) if out_idx else np.zeros((0, 6), dtype=np.int64)
    vals = np.concatenate(out_val) if out_val else np.zeros(0, dtype=np.float32)
    if len(idx) == 0:
        raise EmptyMap(f"no pose reached metric >= {thres}")
    meta = {
        "model": model.name,
        "omega_max": model.omega_max,
        "res_t": res_t,
        "res_r": res_r,
        "thres": thres,
        "roll_range": list(roll_range),
        "pitch_range": list(pitch_range),
        "z_range": list(z_range),
        "seed": seed,
        "entry_count": int(len(idx)),
    }
    log.info("capability map for %s: %d entries", model.name, len(idx))
    return _from_sparse(res_t, res_r, thres, idx, vals, meta)


# ----------------------------------------------------------------------------
# persistence

_HEADER = struct.Struct("<8sII")


def save_cm(cm: CapabilityMap, path) -> None:
    keys, vals = cm.entries()
    meta = dict(cm.meta)
    meta.update(res_t=cm.res_t, res_r=cm.res_r, thres=cm.thres, entry_count=int(len(vals)))
    meta_b = json.dumps(meta, sort_keys=True).encode("utf-8")
    body = np.empty((len(vals), 7), dtype="<f4")
    body[:, :6] = keys
    body[:, 6] = vals
    blob = b"".join(
        [
            _HEADER.pack(MAGIC, CM_FORMAT_VERSION, len(meta_b)),
            meta_b,
            struct.pack("<Q", len(vals)),
            body.tobytes(),
        ]
    )
    Path(path).write_bytes(blob + hashlib.sha256(blob).digest())


def load_cm(path) -> CapabilityMap:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size + 8 + 32:
        raise FormatError("file too short for a capability map")
    magic, version, meta_len = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError("bad magic bytes")
    if version != CM_FORMAT_VERSION:
        raise VersionMismatch(f"capability map version {version}, expected {CM_FORMAT_VERSION}")
    off = _HEADER.size
    if off + meta_len + 8 + 32 > len(data):
        raise FormatError("truncated metadata")
    try:
        meta = json.loads(data[off:off + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable metadata: {exc}") from exc
    off += meta_len
    (count,) = struct.unpack_from("<Q", data, off)
    off += 8
    end = off + 28 * count
    if end + 32 != len(data):
        raise FormatError(f"expected {count} entries, file size does not match")
    if hashlib.sha256(data[:end]).digest() != data[end:]:
        raise ChecksumMismatch("capability map checksum mismatch")
    body = np.frombuffer(data, dtype="<f4", count=7 * count, offset=off).reshape(count, 7)
    res_t, res_r = float(meta["res_t"]), float(meta["res_r"])
    keys = body[:, :6].astype(float)
    idx = np.empty((count, 6), dtype=np.int64)
    idx[:, :3] = np.rint(keys[:, :3] / res_t)
    idx[:, 3:] = np.rint(keys[:, 3:] / res_r)
    return _from_sparse(res_t, res_r, float(meta["thres"]), idx, body[:, 6].astype(np.float32), meta)


# ----------------------------------------------------------------------------
# reporting and verification


def cm_stats(cm: CapabilityMap) -> dict:
    keys, vals = cm.entries()
    if len(vals) == 0:
        return {"entry_count": 0, "mean_metric": None, "mean_defined": False, "bounding_box": None}
    return {
        "entry_count": int(len(vals)),
        "mean_metric": float(np.mean(vals, dtype=np.float64)),
        "mean_defined": True,
        "bounding_box": {
            "min": [float(v) for v in keys.min(axis=0)],
            "max": [float(v) for v in keys.max(axis=0)],
        },
    }


def reverify_pose(model: rb.RobotModel, pose_eb, rng, restarts=8):
    """Best metric over several IK solutions for a base-frame pose, or None.

    Tries the home seed and ``restarts`` random seeds, keeping the highest
    metric among collision-free solutions.
    """
    pose_eb = np.asarray(pose_eb, dtype=float)
    Rt = geo.rpy_to_matrix(pose_eb[3:])
    p = pose_eb[:3]
    if np.hypot(p[0], p[1]) < fm.DEGENERATE_TOL:
        return None
    seeds = np.vstack([model.home_config, model.random_arm(rng, restarts)])
    q, ok = rb.solve_ik_batch(model, np.broadcast_to(Rt, (len(seeds), 3, 3)),
                              np.broadcast_to(p, (len(seeds), 3)), seeds)
    if not ok.any():
        return None
    q = q[ok]
    q = q[~rb.self_collision(model, q)]
    if len(q) == 0:
        return None
    mu = fm.normalized_manipulability_batch(model, q)
    pen = fm.f_r(abs(math.atan2(p[1], p[0])))
    return float(mu.max() * pen)


def verify_cm(cm: CapabilityMap, model: rb.RobotModel, n=200, seed=0, slack=0.02) -> dict:
    """Re-check ``n`` random stored keys with IK; report the pass fraction."""
    rng = np.random.default_rng(seed)
    keys, vals = cm.entries()
    if len(vals) == 0:
        return {"checked": 0, "passed": 0, "fraction": float("nan"), "failures": []}
    pick = rng.choice(len(vals), size=min(n, len(vals)), replace=False)
    failures = []
    for i in pick:
        got = reverify_pose(model, keys[i], rng)
        if got is None or got < cm.thres - slack:
            failures.append({"key": [float(v) for v in keys[i]], "stored": float(vals[i]), "recomputed": got})
    passed = len(pick) - len(failures)
    return {"checked": int(len(pick)), "passed": int(passed),
            "fraction": passed / len(pick), "failures": failures}
