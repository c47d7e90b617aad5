import contextlib
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# number -> (title, passed, detail), filled by the acceptance suite
ACCEPTANCE_RESULTS = {}


class _Outcome:
    def __init__(self):
        self.detail = ""


@contextlib.contextmanager
def acceptance(number: int, title: str):
    """Record a PASS/FAIL line for one acceptance criterion; failures still raise."""
    out = _Outcome()
    try:
        yield out
    except BaseException as err:
        ACCEPTANCE_RESULTS[number] = (title, False, out.detail or f"{type(err).__name__}: {err}".splitlines()[0])
        raise
    ACCEPTANCE_RESULTS[number] = (title, True, out.detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        title, ok, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"[{number:2d}] {'PASS' if ok else 'FAIL'}  {title}: {detail}")


@pytest.fixture(scope="session")
def record():
    return acceptance
