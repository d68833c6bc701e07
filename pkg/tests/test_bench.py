import json

import numpy as np
import pytest

from coopmm import bench as bn

from _helpers import empty_scene_dict


@pytest.fixture(scope="module")
def trivial_scene(tmp_path_factory):
    d = empty_scene_dict()
    d["name"] = "trivial"
    d["goal"] = [4.0, 2.6, 0.75, 0.0, 0.0, np.pi / 2]
    p = tmp_path_factory.mktemp("scenes") / "trivial.json"
    p.write_text(json.dumps(d))
    return p


def spec(path, **kw):
    kw.setdefault("repetitions", 3)
    kw.setdefault("max_iterations", 200)
    return bn.BenchSpec(scenes=[str(path)], **kw)


def test_seed_derivation():
    assert bn.derive_seed(0, 4) == 4
    assert bn.derive_seed(2, 1) == 2 * 1_000_003 + 1


def test_trivial_scene_all_succeed(trivial_scene):
    rep = bn.run_benchmark(spec(trivial_scene), workers=1)
    s = rep.cell("trivial", bn.BenchCell())
    assert s.success_text == "3/3"
    assert s.mean_time is not None and s.std_time >= 0
    assert [r["seed"] for r in rep.rows] == [0, 1, 2]


def test_rerun_is_identical_without_times(trivial_scene):
    sp = spec(trivial_scene, record_time=False,
              cells=[bn.BenchCell(), bn.BenchCell("decoupled", "cmcl")])
    a = bn.run_benchmark(sp, workers=1)
    b = bn.run_benchmark(sp, workers=1)
    assert a.to_json() == b.to_json()
    assert a.to_csv() == b.to_csv()
    assert "wall_time" not in a.to_json()


def test_sample_std_and_sentinel():
    mean, std = bn.summarize_times([1.0, 2.0, 3.0, None])
    assert mean == pytest.approx(2.0) and std == pytest.approx(1.0)
    assert bn.summarize_times([4.0]) == (4.0, 0.0)
    assert bn.summarize_times([]) == (None, None)
    s = bn.CellSummary("x", bn.BenchCell(), 0, 10, None, None)
    assert s.time_text == bn.SENTINEL and s.success_text == "0/10"
    s = bn.CellSummary("x", bn.BenchCell(), 2, 10, 1.234, 0.5)
    assert s.time_text == "1.23±0.50"


def test_errors_are_isolated(trivial_scene, monkeypatch):
    calls = []
    real = bn.bl.plan_framework

    def flaky(framework, scene, cms, req):
        calls.append(req.seed)
        if req.seed == 1:
            raise RuntimeError("boom")
        return real(framework, scene, cms, req)

    monkeypatch.setattr(bn.bl, "plan_framework", flaky)
    rep = bn.run_benchmark(spec(trivial_scene), workers=1)
    assert calls == [0, 1, 2]
    bad = [r for r in rep.rows if r["status"] == "Error"]
    assert len(bad) == 1 and "boom" in bad[0]["error"]
    assert rep.cell("trivial", bn.BenchCell()).successes == 2


def test_table_layout(trivial_scene):
    sp = spec(trivial_scene, repetitions=1,
              cells=[bn.BenchCell("hier", "cmcl"), bn.BenchCell("hier", "ikcl"),
                     bn.BenchCell("pj", "none")])
    rep = bn.run_benchmark(sp, workers=1)
    lines = rep.to_csv().splitlines()
    assert lines[0] == ("scene,planner,CMCL success,CMCL time(s),IKCL success,IKCL time(s),"
                        "PJ success,PJ time(s)")
    assert lines[1].startswith("trivial,rrtconnect,1/1,")
    assert len(lines) == 2


def test_report_files(trivial_scene, tmp_path):
    rep = bn.run_benchmark(spec(trivial_scene, repetitions=1), workers=1)
    pj, pc = rep.write(tmp_path / "out")
    doc = json.loads(pj.read_text())
    assert doc["cells"][0]["success"] == "1/1"
    assert len(doc["runs"]) == 1
    assert pc.read_text() == rep.to_csv()


def test_spec_round_trip(tmp_path):
    sp = bn.BenchSpec(scenes=["open"], cells=[{"framework": "vs"}], budgets={"open": 2.0})
    p = tmp_path / "spec.json"
    p.write_text(json.dumps(sp.to_dict()))
    back = bn.BenchSpec.load(p)
    assert back.cells == [bn.BenchCell("vs", "cmcl", "rrtconnect")]
    assert back.budgets == {"open": 2.0}


def test_spec_validation():
    with pytest.raises(ValueError):
        bn.BenchSpec(scenes=["open"], repetitions=0)
    with pytest.raises(ValueError):
        bn.BenchSpec(scenes=["open"], budgets={"open": 0})
    with pytest.raises(ValueError):
        bn.BenchSpec(scenes=["open"], cells=[{"framework": "magic"}])


def test_budget_override(trivial_scene):
    sp = spec(trivial_scene, repetitions=1, budgets={"trivial": 0.5}, max_iterations=None)
    rep = bn.run_benchmark(sp, workers=1)
    assert rep.rows[0]["wall_time"] <= 0.5 * 1.05 + 0.05


def test_timing_comparison(model, cm):
    assert bn.timing_comparison([model], 0, cms=[cm]) == []
    rows = bn.timing_comparison([model], 50, cms=[cm], seed=1)
    assert rows[0]["samples"] == 50 and rows[0]["speedup"] > 1
    text = bn.table1_csv(rows)
    assert text.splitlines()[0] == "model,samples,CM (ms),IK (ms),speedup"


def test_random_query_poses_in_key_box(cm, rng):
    keys, _ = cm.entries()
    p = bn.random_query_poses(cm, 100, rng)
    assert np.all(p >= keys.min(axis=0)) and np.all(p <= keys.max(axis=0))


def test_label():
    assert bn.BenchCell("hier", "ikcl").label == "IKCL"
    assert bn.BenchCell("vs", "cmcl").label == "VS"
