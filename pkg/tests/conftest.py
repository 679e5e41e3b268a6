import pytest

_CRITERIA = []


@pytest.fixture
def record_criterion():
    """Record one acceptance line; the lines are echoed in the terminal summary."""

    def record(number, title, passed, detail, elapsed, budget):
        within = elapsed <= budget
        ok = bool(passed) and within
        line = (f"{'PASS' if ok else 'FAIL'} criterion {number:2d} {title}: {detail}; "
                f"runtime {elapsed:.1f}s (budget {budget:.0f}s{'' if within else ', exceeded'})")
        _CRITERIA.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_CRITERIA):
        terminalreporter.write_line(line)
