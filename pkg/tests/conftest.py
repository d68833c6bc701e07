import numpy as np
import pytest

from coopmm import resources
from coopmm import scene as sc


@pytest.fixture(scope="session")
def model():
    return resources.load_bundled_model("ref6")


@pytest.fixture(scope="session")
def cm(model):
    return resources.get_cm(model)


@pytest.fixture(scope="session")
def scenes():
    return {sc.load_scene(p).name: sc.load_scene(p) for p in sc.bundled_scene_paths()}


@pytest.fixture(scope="session")
def cms_for(cm):
    def get(scene):
        return [cm] * scene.n_robots
    return get


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from _helpers import ACCEPTANCE
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
