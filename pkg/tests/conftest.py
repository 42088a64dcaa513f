import math

import numpy as np
import pytest

from cransim.channel import dbm_to_power
from cransim.scenario import bundled_scenario
from cransim.signal import BasebandSignal, Timestamp
from cransim.waveforms import TelegramSpec, gen_telegram

EPOCH = Timestamp(1_700_000_000_000_000_000)


@pytest.fixture(scope="session")
def scenario():
    return bundled_scenario()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def noisy_telegram(spec: TelegramSpec, snr_db: float, rng, *, lead: int = 20000, tail: int = 20000,
                   delay: float = 0.0, cfo: float = 0.0, power_dbm: float = -100.0,
                   t0: Timestamp = EPOCH) -> tuple[BasebandSignal, object, float]:
    """Telegram in complex noise at per-sample SNR ``snr_db`` (Es/N0 is higher by 10*log10(sps)).

    Returns the stream, the schedule and the true telegram start time
    (seconds after ``t0``). ``delay`` is a fractional-sample shift.
    """
    from cransim import kernels

    sig, sched = gen_telegram(spec)
    n = lead + len(sig) + tail
    fs = spec.sample_rate
    pos = np.arange(n) - lead - delay
    x = kernels.sinc_interp(sig.samples, pos)
    amp = math.sqrt(dbm_to_power(power_dbm))
    x = amp * x * np.exp(2j * np.pi * cfo * np.arange(n) / fs)
    noise = dbm_to_power(power_dbm) / 10 ** (snr_db / 10)
    x += math.sqrt(noise / 2) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return BasebandSignal(x, fs, t0), sched, (lead + delay) / fs


#: (criterion, passed, detail) rows collected by the acceptance tests
ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")
