import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vistrack import _kernels

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

KERNEL_VARIANTS = {
    "py": (_kernels.hungarian_py, _kernels.label_components_py),
    "jit": (_kernels.hungarian_jit, _kernels.label_components_jit),
}


@pytest.fixture(params=sorted(KERNEL_VARIANTS))
def kernels(request):
    """(hungarian, label_components) for the interpreted and compiled builds."""
    return KERNEL_VARIANTS[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[n])
