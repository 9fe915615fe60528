import numpy as np
import pytest

from galimo.geometry import CameraIntrinsics

ACCEPTANCE_LINES: list = []


def record_acceptance(number: int, passed: bool, detail: str) -> str:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def kitti_k():
    return CameraIntrinsics.kitti()


@pytest.fixture(scope="session")
def toy_k():
    return CameraIntrinsics(100.0, 100.0, 50.0, 50.0, 100, 100)
