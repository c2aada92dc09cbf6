import numpy as np
import pytest

from subsde import make_stable_spec


@pytest.fixture
def half_stable():
    return make_stable_spec(0.5, 1.0)


@pytest.fixture
def c_L():
    return float(np.sqrt(2.0 * np.pi))


_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(number: int, claim: str, ok: bool, detail: str) -> bool:
        _ACCEPTANCE[number] = f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {claim}: {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
