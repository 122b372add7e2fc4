import numpy as np
import pytest
from hypothesis import settings

from modadc import signals

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def random_bandlimited(seed, peak, Omega, period):
    """Random trig polynomial, periodic on ``period``, peak ``peak`` on a dense grid."""
    s = signals.bandlimited_noise(1.0, Omega, period, seed)
    grid = s.eval(np.linspace(0, period, 8192, endpoint=False))
    return _Scaled(s, peak / np.max(np.abs(grid)))


class _Scaled:
    def __init__(self, s, k):
        self.s, self.k = s, k
        self.bandlimit_Omega = s.bandlimit_Omega
        self.amplitude_bound = s.amplitude_bound * k

    def eval(self, t):
        return self.k * self.s.eval(t)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


def record_acceptance(num, ok, detail):
    ACCEPTANCE_LINES[num] = f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}"
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for num in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[num])
