import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from offline_tsc.core import bundled_config  # noqa: E402


@pytest.fixture(scope="session")
def settings():
    return bundled_config("ci")


@pytest.fixture(scope="session")
def spec(settings):
    return settings.spec


ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records one PASS/FAIL line and asserts ``ok``."""
    def record(n: int, ok: bool, detail: str):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[n] = line
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
