import pytest

ACCEPTANCE = {}


@pytest.fixture
def record_criterion():
    """Store (passed, detail) for an acceptance criterion; printed in the summary."""
    def record(number, passed, detail):
        ACCEPTANCE[number] = (bool(passed), detail)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
