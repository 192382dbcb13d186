import pytest

# one line per acceptance criterion, printed after the run
VERDICTS = {}


@pytest.fixture
def verdict():
    def record(number, passed, detail):
        VERDICTS[number] = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(VERDICTS[number])
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[k])
