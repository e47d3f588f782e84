import numpy as np
import pytest

from nvgrating import TWO_PI
from nvgrating.bloch import ControlPulse


def random_pulse(rng, n_steps, omega_max=TWO_PI * 5e6, dt=4e-9, detuning_channel=False):
    amp = omega_max * np.sqrt(rng.uniform(0, 1, n_steps))
    phase = rng.uniform(0, TWO_PI, n_steps)
    steps = np.zeros((n_steps, 3))
    steps[:, 0] = amp * np.cos(phase)
    steps[:, 1] = amp * np.sin(phase)
    if detuning_channel:
        steps[:, 2] = rng.normal(0, omega_max / 4, n_steps)
    return ControlPulse(dt, steps, omega_max)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, shown after the run even when output is captured
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
