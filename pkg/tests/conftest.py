import numpy as np
import pytest

from epidepth.geometry import CameraView, make_view, rotation_about
from epidepth.synth import generate_scene

K100 = np.array([[100.0, 0, 50], [0, 100.0, 50], [0, 0, 1]])


def view_from(K, R, T, id=0, width=100, height=100):
    return CameraView(id, width, height, K[0, 0], K[1, 1], K[0, 2], K[1, 2], R, T)


@pytest.fixture
def r1():
    """Rectified pair: identity rotations, centers at the origin and (1, 0, 0)."""
    return make_view(0, (0.0, 0.0, 0.0)), make_view(1, (1.0, 0.0, 0.0))


@pytest.fixture
def r2():
    """Converging pair at (+-0.5, 0, 0), each turned 10 degrees inward about y."""
    a = np.deg2rad(10.0)
    return make_view(0, (-0.5, 0, 0), rotation_about("y", a)), make_view(1, (0.5, 0, 0), rotation_about("y", -a))


@pytest.fixture(scope="session")
def converging3():
    return generate_scene("converging3", 0)


@pytest.fixture(scope="session")
def rectified2():
    return generate_scene("rectified2", 0)


# acceptance verdicts, echoed after the run so they show without -s
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
