import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cbfhvi.cbf2d import GridSpec, build_space
from cbfhvi.operators import CbfParams

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.load_profile("default")

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def disc8():
    return build_space(GridSpec(8, 8))


@pytest.fixture(scope="session")
def disc16():
    return build_space(GridSpec(16, 16))


@pytest.fixture(scope="session")
def disc16_weak():
    """16x16 grid with the trace scaled by 0.2."""
    return build_space(GridSpec(16, 16), trace_scale=0.2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def params():
    return CbfParams(mu=1.0, alpha=0.1, beta=1.0, r=3.0)


def random_state(rng, space, scale=None):
    s = rng.standard_normal(space.n)
    target = 10 ** rng.uniform(-2, 1) if scale is None else scale
    return s * (target / np.sqrt(s @ (space.gram_H @ s)))
