import pytest

_ACCEPTANCE_LINES: dict[str, str] = {}


@pytest.fixture
def acceptance_line(request):
    """Record a one-line verdict for the acceptance report.

    The line is written as FAIL first and replaced once the test body
    calls the returned function after its assertions pass.
    """
    key = request.node.nodeid
    name = request.node.name

    def report(detail: str, passed: bool = True) -> None:
        _ACCEPTANCE_LINES[key] = f"{'PASS' if passed else 'FAIL'} {name}: {detail}"

    _ACCEPTANCE_LINES[key] = f"FAIL {name}: did not complete"
    return report


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in _ACCEPTANCE_LINES.values():
        terminalreporter.write_line(line)
