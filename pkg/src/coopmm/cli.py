"""Command line interface: maps, planning, simulation, rendering, benchmarks."""
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import baselines as bl
from . import bench as bn
from . import capability as cmod
from . import decentralized as dc
from . import planner as pl
from . import render as rd
from . import resources
from . import robot as rb
from . import scene as sc


def _dump(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n"


def _emit(text: str, out):
    if out is None:
        click.echo(text, nl=False)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)


def _load_scene(ref) -> sc.Scene:
    try:
        return sc.load_scene(bn._scene_file(ref))
    except FileNotFoundError as exc:
        raise click.BadParameter(str(exc), param_hint="--scene") from exc


def _load_model(ref) -> rb.RobotModel:
    p = Path(ref)
    return rb.load_model(p) if p.is_file() else resources.load_bundled_model(ref)


def _load_path(path) -> pl.ObjectPath:
    d = json.loads(Path(path).read_text())
    d = d.get("path", d)
    return pl.ObjectPath(d["waypoints"], d.get("durations"))


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Cooperative transport planning with mobile manipulators."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


# ----------------------------------------------------------------------------
# capability maps


@main.group()
def cm():
    """Build and inspect capability maps."""


@cm.command("build")
@click.option("--model", "model_ref", default="ref6", show_default=True,
              help="Bundled model name or model JSON file.")
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Map file; default is the shared cache.")
@click.option("--res-t", type=float, default=resources.DEFAULT_CM_PARAMS["res_t"], show_default=True)
@click.option("--res-r", type=float, default=resources.DEFAULT_CM_PARAMS["res_r"], show_default=True)
@click.option("--thres", type=float, default=resources.DEFAULT_CM_PARAMS["thres"], show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def cm_build(model_ref, out, res_t, res_r, thres, seed):
    """Build a map and print its statistics."""
    model = _load_model(model_ref)
    params = {"res_t": res_t, "res_r": res_r, "thres": thres, "seed": seed}
    if out is None:
        m = resources.get_cm(model, params)
    else:
        p = dict(resources.DEFAULT_CM_PARAMS)
        p.update(params)
        m = cmod.construct_cm(model, **p)
        cmod.save_cm(m, out)
    click.echo(_dump(cmod.cm_stats(m)), nl=False)


@cm.command("stats")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def cm_stats(path, out):
    """Entry count, mean metric and key bounding box of a map file."""
    _emit(_dump(cmod.cm_stats(cmod.load_cm(path))), out)


@cm.command("verify")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
@click.option("--model", "model_ref", default="ref6", show_default=True)
@click.option("-n", "--samples", type=int, default=200, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def cm_verify(path, model_ref, samples, seed, out):
    """Re-check random stored keys with IK."""
    rep = cmod.verify_cm(cmod.load_cm(path), _load_model(model_ref), n=samples, seed=seed)
    _emit(_dump(rep), out)


# ----------------------------------------------------------------------------
# planning and execution


@main.command("plan")
@click.option("--scene", "scene_ref", required=True, help="Bundled scene name or scene JSON file.")
@click.option("--framework", type=click.Choice(bl.FRAMEWORKS), default="hier", show_default=True)
@click.option("--mode", type=click.Choice(pl.MODES), default="cmcl", show_default=True)
@click.option("--planner", type=click.Choice(pl.PLANNERS), default="rrtconnect", show_default=True)
@click.option("--budget", type=float, default=None, help="Seconds; default is the scene budget.")
@click.option("--iterations", type=int, default=None,
              help="Cap planner iterations instead of wall time (reproducible).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.option("--svg", type=click.Path(dir_okay=False), default=None, help="Also render the result.")
def plan_cmd(scene_ref, framework, mode, planner, budget, iterations, seed, out, svg):
    """Plan an object path between the scene's start and goal poses."""
    scene = _load_scene(scene_ref)
    cms = resources.cms_for_scene(scene) if mode == "cmcl" or framework == "decoupled" else None
    budget = budget if budget is not None else (scene.budget or 10.0)
    req = pl.PlanRequest(scene.start, scene.goal, budget=budget, planner=planner, mode=mode,
                         seed=seed, max_iterations=iterations)
    res = bl.plan_framework(framework, scene, cms, req)
    doc = {"scene": scene.name, "framework": framework, "mode": mode, "planner": planner,
           "seed": seed, "budget": budget, "iterations": iterations, **res.to_dict()}
    _emit(_dump(doc), out)
    if svg is not None:
        rd.render_scene_svg(scene, [res.path.waypoints] if res.path is not None else [], svg,
                            title=f"{scene.name} {framework} {res.status}")
    if not res.success:
        sys.exit(2)


@main.command("simulate")
@click.option("--scene", "scene_ref", required=True)
@click.option("--path", "path_file", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Plan output or path JSON; default is a roll oscillation at the start pose.")
@click.option("--rate", type=float, default=100.0, show_default=True, help="Control rate in Hz.")
@click.option("--duration", type=float, default=None, help="Seconds; default is the whole path.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True,
              help="Directory for trajectory.csv and summary.json.")
def simulate_cmd(scene_ref, path_file, rate, duration, seed, out):
    """Execute a path with the per-robot optimiser and controller."""
    scene = _load_scene(scene_ref)
    cms = resources.cms_for_scene(scene)
    if path_file is None:
        path = dc.sinusoidal_roll_path(scene.start, dt=1.0 / rate,
                                       duration=duration if duration is not None else 20.0)
    else:
        path = _load_path(path_file)
        if path.durations is None:
            path = pl.ObjectPath(path.waypoints,
                                 pl.time_parameterize(path.waypoints, pl.DEFAULT_OBJECT_SPEED))
    log = dc.simulate_execution(scene, cms, path, rate_hz=rate, seed=seed, duration=duration,
                                raise_on_diverge=False)
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    (d / "trajectory.csv").write_text(log.to_csv())
    (d / "summary.json").write_text(log.summary_json())
    click.echo(log.summary_json(), nl=False)
    if log.status != "ok":
        sys.exit(2)


@main.command("render")
@click.option("--scene", "scene_ref", required=True)
@click.option("--path", "path_files", multiple=True, type=click.Path(exists=True, dir_okay=False),
              help="Plan output or path JSON; repeatable.")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def render_cmd(scene_ref, path_files, out):
    """Top-down SVG of a scene and paths."""
    scene = _load_scene(scene_ref)
    paths = [_load_path(p).waypoints for p in path_files]
    rd.render_scene_svg(scene, paths, out, title=scene.name)


# ----------------------------------------------------------------------------
# benchmarks


@main.group()
def bench():
    """Benchmark runs."""


@bench.command("run")
@click.option("--spec", "spec_file", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--workers", type=int, default=None, help="Worker processes; default COOP_THREADS or CPU count.")
def bench_run(spec_file, out, workers):
    """Run a benchmark spec and write report.json and report.csv."""
    spec = bn.BenchSpec.load(spec_file)

    def progress(row):
        logging.getLogger("coopmm.bench").info("%s %s/%s/%s run %d: %s", row["scene"],
                                               row["framework"], row["mode"], row["planner"],
                                               row["run"], row["status"])

    rep = bn.run_benchmark(spec, workers=workers, progress=progress)
    rep.write(out)
    click.echo(rep.to_csv(), nl=False)


@bench.command("table1")
@click.option("--model", "model_refs", multiple=True, default=("ref6",), show_default=True)
@click.option("-n", "--samples", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def bench_table1(model_refs, samples, seed, out):
    """Mean map-query vs IK-check time per model."""
    models = [_load_model(m) for m in model_refs]
    rows = bn.timing_comparison(models, samples, seed=seed)
    _emit(bn.table1_csv(rows), out)


if __name__ == "__main__":  # pragma: no cover
    main()
