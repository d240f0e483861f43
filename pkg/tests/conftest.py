import pytest

from tpump.design import DEFAULT_SEPARATIONS, IndexProfile, calibrate

# one line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def law():
    """Coupling law from the continuum solver at three wavelengths."""
    return calibrate(IndexProfile(), DEFAULT_SEPARATIONS, (1510.0, 1550.0, 1590.0))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
