"""Bundled models/scenes and the on-disk capability-map cache.

Maps are expensive to build, so :func:`get_cm` stores them under a cache
directory keyed by a hash of the model document and build parameters.  The
directory is ``$COOP_CACHE`` when set, otherwise ``~/.cache/coopmm``.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from pathlib import Path

import numpy as np

from . import capability as cmod
from . import robot as rb

log = logging.getLogger(__name__)

DATA_DIR = Path(__file__).resolve().parent / "data"
MODELS_DIR = DATA_DIR / "models"
SCENES_DIR = DATA_DIR / "scenes"

DEFAULT_CM_PARAMS = {
    "res_t": 0.1,
    "res_r": float(np.pi / 8),
    "thres": 0.4,
    "roll_range": [float(-np.pi / 8), float(np.pi / 8)],
    "pitch_range": [float(-np.pi / 8), float(np.pi / 8)],
    "z_range": None,
    "seed": 0,
}


def cache_dir() -> Path:
    d = os.environ.get("COOP_CACHE")
    path = Path(d) if d else Path.home() / ".cache" / "coopmm"
    path.mkdir(parents=True, exist_ok=True)
    return path


def model_path(name: str) -> Path:
    p = MODELS_DIR / (name if name.endswith(".json") else f"{name}.json")
    if not p.is_file():
        raise FileNotFoundError(f"no bundled model {name!r}")
    return p


def load_bundled_model(name="ref6") -> rb.RobotModel:
    return rb.load_model(model_path(name))


def scene_path(name: str) -> Path:
    """Bundled scene by file stem (``b_low_block``) or scene name (``low_block``)."""
    p = SCENES_DIR / (name if name.endswith(".json") else f"{name}.json")
    if p.is_file():
        return p
    for q in sorted(SCENES_DIR.glob("*.json")):
        if json.loads(q.read_text()).get("name") == name:
            return q
    raise FileNotFoundError(f"no bundled scene {name!r}")


def cm_key(model: rb.RobotModel, params: dict) -> str:
    doc = json.dumps({"model": rb.model_to_dict(model), "params": params}, sort_keys=True)
    return hashlib.sha256(doc.encode()).hexdigest()[:16]


def get_cm(model: rb.RobotModel, params: dict | None = None, cache: Path | None = None,
           build=True) -> cmod.CapabilityMap:
    """Load the map for ``model`` from the cache, building it on a miss."""
    p = dict(DEFAULT_CM_PARAMS)
    if params:
        p.update(params)
    cache = Path(cache) if cache is not None else cache_dir()
    path = cache / f"{model.name}-{cm_key(model, p)}.cm"
    if path.is_file():
        try:
            return cmod.load_cm(path)
        except cmod.FormatError:
            log.warning("discarding unreadable cached map %s", path)
    if not build:
        raise FileNotFoundError(path)
    log.info("building capability map for %s (%s)", model.name, p)
    cm = cmod.construct_cm(model, **p)
    tmp = path.with_suffix(".tmp")
    cmod.save_cm(cm, tmp)
    tmp.replace(path)
    return cm


def cms_for_scene(scene, params: dict | None = None) -> list:
    """One map per robot; robots sharing a model share the map object."""
    by_name = {}
    out = []
    for r in scene.robots:
        key = cm_key(r.model, params or {})
        if key not in by_name:
            by_name[key] = get_cm(r.model, params)
        out.append(by_name[key])
    return out
