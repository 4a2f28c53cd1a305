import time
from contextlib import contextmanager

import pytest

_CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Time a block, record one PASS/FAIL line for it and enforce its budget."""

    @contextmanager
    def run(label: str, budget: float | None = None):
        start = time.perf_counter()
        ok = False
        note = ""
        try:
            yield
            elapsed = time.perf_counter() - start
            ok = budget is None or elapsed < budget
            if not ok:
                note = f" over budget of {budget:g} s"
        except BaseException as exc:
            note = f" {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
            raise
        finally:
            elapsed = time.perf_counter() - start
            limit = f" (budget {budget:g} s)" if budget is not None else ""
            line = f"{'PASS' if ok else 'FAIL'} {label} [{elapsed:.2f} s{limit}]{note}"
            _CRITERIA.append(line)
            print(line)
        assert ok, line

    return run


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
