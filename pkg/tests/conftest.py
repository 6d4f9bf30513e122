import pytest

ACCEPTANCE = []


@pytest.fixture()
def report():
    """Record one acceptance line; the test still asserts on ``ok``."""

    def _report(criterion, ok, detail):
        ACCEPTANCE.append((criterion, bool(ok), detail))
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, ok, detail in sorted(ACCEPTANCE, key=lambda r: str(r[0])):
        terminalreporter.write_line(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")
