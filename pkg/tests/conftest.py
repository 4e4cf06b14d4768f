import numpy as np
import pytest

from cestden import NoiseSpec, PhantomConfig, add_gaussian_noise, synthesize_phantom

# filled by test_acceptance.py; echoed after the run so the per-criterion
# verdict lines survive pytest's output capture
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_phantom():
    """32x32 phantom with parameter maps, shared by the cheap tests."""
    vol, masks, params = synthesize_phantom(
        PhantomConfig(M=32, N=32, seed=5), return_params=True
    )
    return vol, masks, params


@pytest.fixture(scope="session")
def small_noisy(small_phantom):
    vol, _, _ = small_phantom
    return add_gaussian_noise(vol, NoiseSpec(sigma=0.1, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
