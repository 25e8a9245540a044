import pytest

ACCEPTANCE = []


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion: ``criterion(name, ok, detail)`` prints and stores a line."""

    def record(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
