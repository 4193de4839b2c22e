import numpy as np
import pytest

import seqforge as sf
from seqforge import _backend

FLASH_THETA = sf.PulseParams("flash_approx", -1.0, 900.0, -5.0)
MPRAGE_THETA = sf.PulseParams("mprage_approx", 0.5, -1.2e-3, 1.5e-7)


@pytest.fixture(params=sorted(_backend.BACKENDS))
def backend(request):
    """Run the test once per available kernel backend."""
    previous = _backend.NAME
    _backend.use(request.param)
    yield request.param
    _backend.use(previous)


@pytest.fixture(scope="session")
def small_phantom():
    spec = sf.three_shell_spec((48, 48, 48))
    nmr, labels, coords = sf.generate_phantom(spec)
    return spec, nmr, labels, coords


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, line = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {line}")
