import sys
import numpy as np
import pytest

from ppgvc.audio import Waveform

FS = 16000


def tone(freq, seconds=0.5, amp=0.5, fs=FS):
    t = np.arange(int(round(seconds * fs))) / fs
    return Waveform(amp * np.sin(2 * np.pi * freq * t), fs)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[num])
