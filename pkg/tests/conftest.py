import pytest
from hypothesis import HealthCheck, settings

from spinecho.ensemble import EnsembleSpec
from spinecho.geometry import BeamGeometry

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def geom():
    return BeamGeometry.from_degrees(1.1, 2.1)


@pytest.fixture
def spec():
    return EnsembleSpec(100_000, 15e-6, (500e-6, 500e-6, 150e-6), 102e-6)


@pytest.fixture
def small_spec():
    return EnsembleSpec(20_000, 15e-6, (500e-6, 500e-6, 150e-6), 102e-6)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for a criterion, then assert every check."""

    def report(number: int, title: str, checks: dict, detail: str = ""):
        failed = [name for name, ok in checks.items() if not ok]
        status = "PASS" if not failed else "FAIL"
        line = f"[{status}] {number}. {title}: {detail}"
        if failed:
            line += f" (failed: {', '.join(failed)})"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert not failed, line

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split("] ")[1].split(".")[0])):
            terminalreporter.write_line(line)
