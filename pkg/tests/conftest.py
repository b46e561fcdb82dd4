import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fkkec.simulate import PhantomConfig, generate_phantom

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _quiet_subsample_warning():
    # tiny training cubes routinely have fewer extreme rows than basis vectors
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="only .* sub-sampled rows")
        yield


@pytest.fixture(scope="session")
def small_phantom():
    """37 x 123 pixel phantom (4551 spectra)."""
    return generate_phantom(PhantomConfig(side_scale=0.5))


@pytest.fixture(scope="session")
def tiny_phantom():
    """7 x 25 pixels, 128 channels: fast end-to-end runs."""
    return generate_phantom(PhantomConfig(side_scale=0.1, n_freq=128))


@pytest.fixture(scope="session")
def base_phantom():
    """74 x 246 pixel phantom (18 204 spectra), seed 0."""
    return generate_phantom(PhantomConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance verdicts, printed as one line each at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {key}: {detail}")
