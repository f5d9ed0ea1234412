import sys
import numpy as np
import pytest
from hypothesis import strategies as st

from swarmest.geometry import Pose, exp_so3
from swarmest.state import NavState

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
vec3 = st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=3).map(np.array)
small_rotvec = st.lists(st.floats(-3.0, 3.0, allow_nan=False), min_size=3, max_size=3).map(np.array).filter(
    lambda v: np.linalg.norm(v) < np.pi - 1e-3
)


def random_rotation(rng):
    v = rng.normal(size=3)
    return exp_so3(v / np.linalg.norm(v) * rng.uniform(0, np.pi))


def random_pose(rng, scale=5.0):
    return Pose(random_rotation(rng), rng.normal(scale=scale, size=3))


def random_state(rng, ext_ids=(2, 5)):
    return NavState(
        R=random_rotation(rng),
        p=rng.normal(size=3) * 3,
        v=rng.normal(size=3),
        bg=rng.normal(size=3) * 0.01,
        ba=rng.normal(size=3) * 0.1,
        g=np.array([0, 0, -9.81]) + rng.normal(size=3) * 0.1,
        extrinsics={j: random_pose(rng) for j in ext_ids},
    )


def random_spd(rng, n, scale=1.0):
    A = rng.normal(size=(n, n))
    return scale * (A @ A.T / n + 0.1 * np.eye(n))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria (slow)")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for ln in sorted(lines):
            terminalreporter.write_line(ln)
