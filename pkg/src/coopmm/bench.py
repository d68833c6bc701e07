"""Benchmark harness: repeated planning runs, success/time tables and map timing.

Per-run seeds are ``base_seed * 1_000_003 + run_index``.  Wall time is
measured with a monotonic clock around the planner call only; scene and map
loading are excluded.  A run that raises is recorded as a failure with the
exception name and the batch carries on.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import baselines as bl
from . import formation as fm
from . import geometry as geo
from . import planner as pl
from . import resources
from . import robot as rb
from . import scene as sc

SEED_STRIDE = 1_000_003
SENTINEL = "---"


def derive_seed(base_seed: int, run_index: int) -> int:
    return int(base_seed) * SEED_STRIDE + int(run_index)


@dataclass(frozen=True)
class BenchCell:
    framework: str = "hier"
    mode: str = "cmcl"
    planner: str = "rrtconnect"

    @property
    def label(self) -> str:
        if self.framework == "hier":
            return self.mode.upper()
        return self.framework.upper()


@dataclass
class BenchSpec:
    """Scenes x cells x repetitions.

    ``scenes`` holds bundled scene names or file paths.  ``budgets`` maps a
    scene name to seconds and overrides the scene's own budget.  Setting
    ``max_iterations`` caps planner iterations instead of wall time, which
    makes every run reproducible; ``record_time=False`` drops timings from
    the outputs so reruns are byte-identical.
    """

    scenes: list
    cells: list = field(default_factory=lambda: [BenchCell()])
    repetitions: int = 10
    budgets: dict = field(default_factory=dict)
    base_seed: int = 0
    max_iterations: int | None = None
    record_time: bool = True

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if any(not b > 0 for b in self.budgets.values()):
            raise ValueError("budgets must be positive")
        self.cells = [c if isinstance(c, BenchCell) else BenchCell(**c) for c in self.cells]
        for c in self.cells:
            if c.framework not in bl.FRAMEWORKS:
                raise ValueError(f"unknown framework {c.framework!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "BenchSpec":
        return cls(**d)

    @classmethod
    def load(cls, path) -> "BenchSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scenes"] = [str(s) for s in self.scenes]
        return d


def _scene_file(ref) -> Path:
    p = Path(ref)
    if p.is_file():
        return p
    return resources.scene_path(str(ref))


_LOADED: dict = {}


def _load(ref):
    """Scene and maps, cached per process."""
    key = str(_scene_file(ref).resolve())
    if key not in _LOADED:
        scene = sc.load_scene(key)
        _LOADED[key] = (scene, resources.cms_for_scene(scene))
    return _LOADED[key]


def run_single(scene, cms, cell: BenchCell, budget: float, seed: int,
               max_iterations=None) -> dict:
    """One planning run as a detail row; exceptions become failures."""
    row = {"framework": cell.framework, "mode": cell.mode, "planner": cell.planner, "seed": seed}
    try:
        req = pl.PlanRequest(scene.start, scene.goal, budget=budget, planner=cell.planner,
                             mode=cell.mode, seed=seed, max_iterations=max_iterations)
        t0 = time.monotonic()
        res = bl.plan_framework(cell.framework, scene, cms, req)
        wall = time.monotonic() - t0
        row.update(status=res.status, success=res.success,
                   path_length=res.path.length if res.success else None,
                   nodes=res.stats.nodes, valid_checks=res.stats.valid_checks,
                   error=None, wall_time=wall)
    except Exception as exc:  # recorded, never fatal to the batch
        row.update(status="Error", success=False, path_length=None, nodes=0, valid_checks=0,
                   error=f"{type(exc).__name__}: {exc}", wall_time=None,
                   traceback=traceback.format_exc(limit=3))
    return row


def _task(args):
    ref, cell, budget, seed, max_iterations, run = args
    scene, cms = _load(ref)
    row = run_single(scene, cms, cell, budget, seed, max_iterations)
    row.update(scene=scene.name, run=run)
    return row


def worker_count(n_tasks: int) -> int:
    env = os.environ.get("COOP_THREADS")
    n = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(n, n_tasks))


@dataclass
class CellSummary:
    scene: str
    cell: BenchCell
    successes: int
    total: int
    mean_time: float | None
    std_time: float | None

    @property
    def success_text(self) -> str:
        return f"{self.successes}/{self.total}"

    @property
    def time_text(self) -> str:
        if self.mean_time is None:
            return SENTINEL
        return f"{self.mean_time:.2f}±{self.std_time:.2f}"


def summarize_times(times) -> tuple:
    """Mean and sample (n - 1) std of successful run times; std is 0 for one run."""
    t = np.asarray([v for v in times if v is not None], dtype=float)
    if t.size == 0:
        return None, None
    std = float(np.std(t, ddof=1)) if t.size > 1 else 0.0
    return float(np.mean(t)), std


@dataclass
class BenchReport:
    spec: BenchSpec
    rows: list

    def summary(self) -> list:
        out = []
        scenes = list(dict.fromkeys(r["scene"] for r in self.rows))
        for s in scenes:
            for c in self.spec.cells:
                rs = [r for r in self.rows if r["scene"] == s and r["framework"] == c.framework
                      and r["mode"] == c.mode and r["planner"] == c.planner]
                ok = [r for r in rs if r["success"]]
                if self.spec.record_time:
                    mean, std = summarize_times([r["wall_time"] for r in ok])
                else:
                    mean = std = None
                out.append(CellSummary(s, c, len(ok), len(rs), mean, std))
        return out

    def cell(self, scene: str, cell: BenchCell) -> CellSummary:
        for s in self.summary():
            if s.scene == scene and s.cell == cell:
                return s
        raise KeyError((scene, cell))

    def detail_rows(self) -> list:
        keep = ("scene", "framework", "mode", "planner", "run", "seed", "status", "success",
                "path_length", "nodes", "valid_checks", "error")
        out = []
        for r in self.rows:
            d = {k: r.get(k) for k in keep}
            if self.spec.record_time:
                d["wall_time"] = r.get("wall_time")
            out.append(d)
        return out

    def to_dict(self) -> dict:
        cells = []
        for s in self.summary():
            d = {"scene": s.scene, **asdict(s.cell), "label": s.cell.label,
                 "successes": s.successes, "total": s.total, "success": s.success_text}
            if self.spec.record_time:
                d.update(mean_time=s.mean_time, std_time=s.std_time, time=s.time_text)
            cells.append(d)
        return {"spec": self.spec.to_dict(), "cells": cells, "runs": self.detail_rows()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, allow_nan=False) + "\n"

    def to_csv(self) -> str:
        """One row per scene and planner backend, a success/time column pair per method."""
        methods = list(dict.fromkeys((c.framework, c.mode) for c in self.spec.cells))
        planners = list(dict.fromkeys(c.planner for c in self.spec.cells))
        summ = {(s.scene, s.cell): s for s in self.summary()}
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["scene", "planner"]
        for f, m in methods:
            label = BenchCell(f, m).label
            header += [f"{label} success", f"{label} time(s)"]
        w.writerow(header)
        for scene in dict.fromkeys(r["scene"] for r in self.rows):
            for p in planners:
                line = [scene, p]
                for f, m in methods:
                    s = summ.get((scene, BenchCell(f, m, p)))
                    if s is None:
                        line += ["", ""]
                    else:
                        line += [s.success_text, s.time_text if self.spec.record_time else "n/a"]
                w.writerow(line)
        return buf.getvalue()

    def write(self, out_dir) -> tuple:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        pj, pc = out / "report.json", out / "report.csv"
        pj.write_text(self.to_json())
        pc.write_text(self.to_csv())
        return pj, pc


def run_benchmark(spec: BenchSpec, workers: int | None = None, progress=None) -> BenchReport:
    """Execute the whole matrix; rows come back in scene, cell, run order."""
    tasks = []
    for ref in spec.scenes:
        scene, _ = _load(ref)
        budget = float(spec.budgets.get(scene.name, scene.budget or 10.0))
        for cell in spec.cells:
            for run in range(spec.repetitions):
                tasks.append((str(ref), cell, budget, derive_seed(spec.base_seed, run),
                              spec.max_iterations, run))
    n = worker_count(len(tasks)) if workers is None else max(1, workers)
    rows = []
    if n == 1:
        for t in tasks:
            rows.append(_task(t))
            if progress is not None:
                progress(rows[-1])
    else:
        with ProcessPoolExecutor(max_workers=n) as ex:
            for row in ex.map(_task, tasks):
                rows.append(row)
                if progress is not None:
                    progress(row)
    return BenchReport(spec, rows)


# ----------------------------------------------------------------------------
# map query vs IK timing


def ik_check(model: rb.RobotModel, pose_eb, rng):
    """Metric of an arm-frame pose found by numerical IK, or None."""
    pose_eb = np.asarray(pose_eb, dtype=float)
    sol = rb.solve_ik(model, (geo.rpy_to_matrix(pose_eb[3:]), pose_eb[:3]), rng=rng)
    if not sol.success:
        return None
    q = np.concatenate([np.zeros(3), sol.q])
    pen = float(fm.f_r(abs(math.atan2(pose_eb[1], pose_eb[0]))))
    return fm.normalized_manipulability(model, q) * pen


def random_query_poses(cm, n: int, rng) -> np.ndarray:
    """Arm-frame poses drawn uniformly over the map's key bounding box."""
    keys, _ = cm.entries()
    lo, hi = keys.min(axis=0), keys.max(axis=0)
    return rng.uniform(lo, hi, size=(n, 6))


def timing_comparison(models, n_samples: int = 1000, cms=None, seed: int = 0) -> list:
    """Mean per-check time (ms) of a map query vs an IK-based check, per model.

    Both checks see the same poses.  Maps are taken from ``cms`` or the cache
    and their loading is not timed.
    """
    if n_samples <= 0:
        return []
    rows = []
    for k, model in enumerate(models):
        cm = cms[k] if cms is not None else resources.get_cm(model)
        rng = np.random.default_rng([seed, k])
        poses = random_query_poses(cm, n_samples, rng)
        t0 = time.perf_counter()
        for p in poses:
            cm.query(p)
        t_cm = (time.perf_counter() - t0) / n_samples
        t0 = time.perf_counter()
        for p in poses:
            ik_check(model, p, rng)
        t_ik = (time.perf_counter() - t0) / n_samples
        rows.append({"model": model.name, "samples": n_samples, "cm_ms": 1e3 * t_cm,
                     "ik_ms": 1e3 * t_ik, "speedup": t_ik / t_cm})
    return rows


def table1_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "samples", "CM (ms)", "IK (ms)", "speedup"])
    for r in rows:
        w.writerow([r["model"], r["samples"], f"{r['cm_ms']:.4f}", f"{r['ik_ms']:.3f}",
                    f"{r['speedup']:.1f}"])
    return buf.getvalue()
