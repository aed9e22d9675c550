import numpy as np
import pytest

from pyrcpd.tensor import checked


@pytest.fixture(autouse=True)
def _checked_mode():
    # NaN/Inf scanning at every op boundary while testing
    with checked(True):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


TOY_ARCH = "[9:4:4],[5:4:2],[5:4:2]"


def toy_config(kind, seed=0, **kw):
    from pyrcpd.models import ModelConfig

    base = dict(kind=kind, channels=2, wavelet_depth=2, cnn_arch=TOY_ARCH, n_h=4, seed=seed)
    base.update(kw)
    return ModelConfig(**base)


# acceptance outcomes, printed once at the end of the session
ACCEPTANCE = {}


@pytest.fixture
def criterion():
    def record(number, ok, detail=""):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}".rstrip()
        ACCEPTANCE[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
