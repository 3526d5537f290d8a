import pytest

from support import World

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def world():
    return World()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
