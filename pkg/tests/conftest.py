import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_RESULTS: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def criterion():
    """Record an acceptance criterion outcome; the summary hook prints one line each."""

    def record(number: int, title: str, passed: bool, detail: str = "") -> bool:
        _RESULTS[number] = (title, bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_RESULTS):
        title, ok, detail = _RESULTS[n]
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] {n}. {title}" + (f" -- {detail}" if detail else ""))
