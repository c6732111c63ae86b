import pytest

# acceptance checks append "PASS name: detail" / "FAIL name: detail" lines here
ACCEPTANCE_LINES = []


@pytest.fixture
def report_line():
    def add(name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
