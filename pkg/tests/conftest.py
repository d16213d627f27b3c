import pytest

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_line(capsys):
    """Print a criterion verdict live and repeat it in the terminal summary."""
    def emit(line: str) -> None:
        _ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print(f"\n{line}")
    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
