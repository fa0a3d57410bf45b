import pytest

from camguide.geometry import PinholeCamera
from camguide.synthetic import SyntheticScene


@pytest.fixture(scope="session")
def scene():
    return SyntheticScene.from_seed(0)


@pytest.fixture(scope="session")
def small_camera():
    return PinholeCamera.default(64, 64)


@pytest.fixture(scope="session")
def small_frame(scene, small_camera):
    return scene.render(small_camera)


ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """Record one pass/fail line for an acceptance criterion; returns the verdict."""

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        ACCEPTANCE_LINES[number] = f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {title}: {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
