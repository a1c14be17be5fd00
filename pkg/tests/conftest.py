import numpy as np
import pytest

from gareg.imaging import Image

# criterion -> (status, detail); filled by test_acceptance, printed at the end
ACCEPTANCE = {}


def record(name, ok, detail):
    """Store one acceptance line; ``ok`` is True, False or a status string."""
    status = ok if isinstance(ok, str) else ("PASS" if ok else "FAIL")
    ACCEPTANCE[name] = (status, detail)
    print(f"{status}  {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, (status, detail) in ACCEPTANCE.items():
        terminalreporter.write_line(f"{status}  {name}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def gradient16():
    yy, xx = np.mgrid[0:16, 0:16].astype(float)
    return Image(10 * xx + 3 * yy + 0.5 * xx * yy)


@pytest.fixture(scope="session")
def shapes():
    from gareg.harness import shapes_image

    return shapes_image(256)


@pytest.fixture(scope="session")
def checker():
    from gareg.harness import checker_image

    return checker_image(256)
