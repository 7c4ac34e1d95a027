import numpy as np
import pytest

from silence_ser.audio_io import AudioBuffer

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): exit criterion covered by the test")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    number, title = _ACCEPTANCE_BY_NODE.get(report.nodeid, (None, None))
    if number is None:
        return
    prev = _ACCEPTANCE.get(number, (title, True))
    _ACCEPTANCE[number] = (title, prev[1] and report.passed)


_ACCEPTANCE_BY_NODE = {}


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("acceptance")
        if marker is not None:
            _ACCEPTANCE_BY_NODE[item.nodeid] = tuple(marker.args)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def sine(freq, seconds=1.0, rate=16000, amp=0.5):
    t = np.arange(int(round(seconds * rate))) / rate
    return AudioBuffer(amp * np.sin(2 * np.pi * freq * t), rate)
