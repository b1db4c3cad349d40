import pytest

from idstore.lob import OrderBookSnapshot


@pytest.fixture
def b0():
    return OrderBookSnapshot(1.0, ((10, 2), (11, 3)), ((9, -2), (8, -3)))


ACCEPTANCE_LINES: list[tuple[int, str]] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES, key=lambda item: item[0]):
            terminalreporter.write_line(line)
