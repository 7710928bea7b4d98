import pytest

from affinectl.rds import RDGrid, fhn_rd, fhn_wave_profile


@pytest.fixture(scope="session")
def fhn_pulse():
    """Pulse profile of the default FHN medium on L=150, N=1024 (slow to build)."""
    system, grid = fhn_rd(), RDGrid(150.0, 1024)
    return system, grid, fhn_wave_profile(system, grid)


_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per criterion; printed again in the summary."""
    def record(number, title, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title} ({detail})"
        _ACCEPTANCE[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
