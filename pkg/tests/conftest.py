import warnings

import numpy as np
import pytest

from inverse_rt import phantom, rtp

ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def record():
    """``record(n, ok, detail)`` stores one acceptance line and returns ``ok``."""
    def _rec(n, ok, detail=""):
        ACCEPTANCE[n] = (bool(ok), detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return _rec


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def p1():
    return phantom.generate(phantom.preset("p1"))


@pytest.fixture(scope="session")
def p1_plan(p1):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return rtp.solve_plan(p1)


@pytest.fixture
def box_lp():
    from inverse_rt.lp import lp_from_rows
    return lp_from_rows([[1, 0], [0, 1], [1, 0], [0, 1]], ["le", "le", "ge", "ge"], [1, 1, 0, 0])


@pytest.fixture
def simplex_lp():
    from inverse_rt.lp import lp_from_rows
    return lp_from_rows([[1, 1], [1, 0], [0, 1]], ["le", "ge", "ge"], [1, 0, 0])
