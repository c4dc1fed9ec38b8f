import numpy as np
import pytest
from scipy import ndimage

from symlp import warp
from symlp.bench import fixtures
from symlp.imaging import Image, PatchSpec


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(number, title, ok, detail)``."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def record(number, title, ok, detail):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
        lines.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def textured():
    return fixtures.textured(seed=0)


@pytest.fixture(scope="session")
def smooth():
    return fixtures.smooth(size=64, seed=3, sigma=3.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def spec9():
    return PatchSpec(9)


@pytest.fixture(scope="session")
def default_ranges():
    return warp.WarpRanges.symmetric(1.0, 0.2)


def blurred_noise(seed, size=40, sigma=1.0):
    rng = np.random.default_rng(seed)
    a = ndimage.gaussian_filter(rng.uniform(size=(size, size)), sigma)
    a = (a - a.min()) / (a.max() - a.min())
    return Image(a)
