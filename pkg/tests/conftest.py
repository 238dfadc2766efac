import pytest

from sleepsentry.background import warm_up_jit


@pytest.fixture(scope="session", autouse=True)
def _warm_jit():
    # Pay the kernel compile cost once, outside any timed assertion.
    warm_up_jit()
