import numpy as np
import pytest

from lsir.simbench import SimCase, gen_case

_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion for the terminal summary."""

    def record(k, ok, detail=""):
        _CRITERIA[int(k)] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        ok, detail = _CRITERIA[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def case1_small():
    return gen_case(SimCase(1, 400), seed=11, rep_index=0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
