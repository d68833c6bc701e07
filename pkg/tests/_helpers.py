import numpy as np

from coopmm import scene as sc


def empty_scene_dict(n_robots=3, width=8.0, length=8.0, obstacles=()):
    grasps = [([0.4, 0.5, 0.0], [0.0, 0.0, -np.pi / 2]),
              ([-0.4, 0.5, 0.0], [0.0, 0.0, -np.pi / 2]),
              ([0.0, -0.5, 0.0], [0.0, 0.0, np.pi / 2])][:n_robots]
    return {
        "format_version": 1,
        "name": "test",
        "grid": {"cell_size": 0.1, "origin": [0.0, 0.0],
                 "shape": [int(round(length / 0.1)), int(round(width / 0.1))],
                 "obstacles": list(obstacles)},
        "bounds": {"x": [0.0, width], "y": [0.0, length], "z": [0.6, 0.95],
                   "roll": [0.0, 0.0], "pitch": [0.0, 0.0],
                   "yaw": [np.pi / 2 - 0.6, np.pi / 2 + 0.6]},
        "object": {"half_extents": [0.8, 0.5, 0.02]},
        "robots": [{"model": "ref6.json", "grasp": {"xyz": x, "rpy": r}} for x, r in grasps],
        "start": [4.0, 2.0, 0.75, 0.0, 0.0, np.pi / 2],
        "goal": [4.0, 4.0, 0.75, 0.0, 0.0, np.pi / 2],
        "budget": 10.0,
    }


def empty_scene(**kw):
    return sc.scene_from_dict(empty_scene_dict(**kw))


ACCEPTANCE: dict = {}


def record(n: int, ok: bool, detail: str) -> bool:
    """Store one acceptance verdict for the end-of-run summary."""
    ACCEPTANCE[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[n])
    return ok
