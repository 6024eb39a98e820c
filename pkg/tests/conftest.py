import pytest

# one "CRITERION k: PASS|FAIL ..." line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = {}


def record(k, passed, detail):
    line = f"CRITERION {k:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[k] = line
    print(line)
    return passed


@pytest.fixture
def acceptance_record():
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
