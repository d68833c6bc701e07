"""Generator for the bundled six-scene benchmark suite.

All scenes share an 8 m x 12 m world on a 0.1 m grid.  The object is a thin
board carried along +y from y = 2 to y = 10 with its long axis along the
direction of travel.

``open``
    no obstacles.
``low_block``
    one low block on the straight line; the object can pass over it while
    the bases straddle it.
``corridor``
    a tall barrier with a corridor wide enough for the object but not for the
    formation, and a low median elsewhere that the formation can straddle.
``clutter``
    two such barriers plus pillars.
``corridor4`` / ``corridor5``
    the corridor scene carried by four and five robots.

Scenes (c)-(f) allow large heights and tilts, so an object-only path is
usually infeasible for the robots.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

WIDTH, LENGTH, CELL = 8.0, 12.0, 0.1
HALF = [0.8, 0.5, 0.02]
YAW = float(np.pi / 2)
START = [4.0, 2.0, 0.75, 0.0, 0.0, YAW]
GOAL = [4.0, 10.0, 0.75, 0.0, 0.0, YAW]
TALL = 2.5
LOW = 0.3

# grasps in the object frame; tool x points towards the object centre
_LEFT = [0.0, 0.0, -np.pi / 2]
_RIGHT = [0.0, 0.0, np.pi / 2]
GRASPS = {
    3: [([0.4, 0.5, 0.0], _LEFT), ([-0.4, 0.5, 0.0], _LEFT), ([0.0, -0.5, 0.0], _RIGHT)],
    4: [([0.4, 0.5, 0.0], _LEFT), ([-0.4, 0.5, 0.0], _LEFT),
        ([0.4, -0.5, 0.0], _RIGHT), ([-0.4, -0.5, 0.0], _RIGHT)],
    5: [([0.4, 0.5, 0.0], _LEFT), ([-0.4, 0.5, 0.0], _LEFT),
        ([0.4, -0.5, 0.0], _RIGHT), ([-0.4, -0.5, 0.0], _RIGHT),
        ([-0.8, 0.0, 0.0], [0.0, 0.0, 0.0])],
}

SIMPLE_BOUNDS = {"z": [0.6, 0.95], "roll": [0.0, 0.0], "pitch": [0.0, 0.0],
                 "yaw": [YAW - 0.6, YAW + 0.6]}
WIDE_BOUNDS = {"z": [0.4, 2.0], "roll": [-0.5, 0.5], "pitch": [-0.5, 0.5],
               "yaw": [YAW - 0.8, YAW + 0.8]}


def _rect(x0, y0, x1, y1, h):
    return {"rect": [x0, y0, x1, y1], "height": h}


def barrier(y0, y1, corridor, crossing=None, opening=None):
    """A tall barrier across the world with a free corridor ``(x0, x1)``.

    ``crossing`` ``(x0, x1)`` puts a low median in a free gap, leaving 0.8 m of
    free ground on each side of it for the bases; ``opening`` ``(x0, x1)`` is
    an extra free gap.
    """
    free = [tuple(corridor)]
    obs = []
    if crossing is not None:
        a, b = crossing
        free.append((a - 0.8, b + 0.8))
        obs.append(_rect(a, y0, b, y1, LOW))
    if opening is not None:
        free.append(tuple(opening))
    x = 0.0
    for a, b in sorted(free):
        if a > x:
            obs.append(_rect(x, y0, a, y1, TALL))
        x = b
    if x < WIDTH:
        obs.append(_rect(x, y0, WIDTH, y1, TALL))
    return obs


def _scene(name, label, n, budget, obstacles, bounds):
    return {
        "format_version": 1,
        "name": name,
        "label": label,
        "robot_count": n,
        "grid": {"cell_size": CELL, "origin": [0.0, 0.0],
                 "shape": [int(round(LENGTH / CELL)), int(round(WIDTH / CELL))],
                 "obstacles": obstacles},
        "bounds": {"x": [0.0, WIDTH], "y": [0.0, LENGTH], **bounds},
        "object": {"half_extents": HALF},
        "robots": [{"model": "ref6.json", "grasp": {"xyz": xyz, "rpy": [float(v) for v in rpy]}}
                   for xyz, rpy in GRASPS[n]],
        "start": START,
        "goal": GOAL,
        "budget": budget,
    }


def suite() -> list:
    """The six scene documents, without frozen composite configurations."""
    corridor = (3.45, 4.55)
    crossing = (5.8, 7.0)
    return [
        _scene("open", "a", 3, 5.0, [], SIMPLE_BOUNDS),
        _scene("low_block", "b", 3, 5.0, [_rect(3.5, 5.4, 4.5, 6.6, LOW)], SIMPLE_BOUNDS),
        _scene("corridor", "c", 3, 10.0, barrier(4.8, 7.2, corridor, crossing), WIDE_BOUNDS),
        _scene("clutter", "d", 3, 10.0,
               barrier(3.4, 5.0, corridor, crossing)
               + barrier(7.2, 8.8, corridor, (1.0, 2.2))
               + [_rect(0.6, 2.0, 1.0, 2.4, TALL), _rect(7.0, 1.6, 7.4, 2.0, TALL),
                  _rect(6.6, 9.8, 7.0, 10.2, TALL), _rect(0.4, 10.2, 0.8, 10.6, TALL)],
               WIDE_BOUNDS),
        _scene("corridor4", "e", 4, 20.0, barrier(4.8, 7.2, corridor, crossing), WIDE_BOUNDS),
        _scene("corridor5", "f", 5, 20.0, barrier(4.8, 7.2, corridor, opening=(5.0, 8.0)),
               WIDE_BOUNDS),
    ]


def write_suite(out_dir, composites: dict | None = None) -> list:
    """Write the suite as JSON files; ``composites`` maps name -> meta to merge."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for d in suite():
        d.update((composites or {}).get(d["name"], {}))
        p = out_dir / f"{d['label']}_{d['name']}.json"
        p.write_text(json.dumps(d, indent=1, sort_keys=True) + "\n")
        paths.append(p)
    return paths
