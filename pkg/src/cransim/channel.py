"""Propagation and receiver impairment model.

Every station owns one oscillator that drives both frontend channels, so a
station's clock offset, sampling clock offset and carrier offset are the
same on channel 0 (LPWAN) and channel 1 (SoO).

Clock model, with ``t`` true time and ``t_start`` the scenario epoch::

    local(t) = t_start + (t - t_start) * (1 + sco_ppm * 1e-6) + clock_offset

Amplitudes are in sqrt(mW): a sample power of 1.0 corresponds to 0 dBm.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .signal import BasebandSignal, Timestamp

C = 299_792_458.0
BOLTZMANN_DBM_HZ = -174.0

CH_LPWAN = 0
CH_SOO = 1


class ChannelError(ValueError):
    pass


@dataclass(frozen=True)
class StationConfig:
    """One base station.

    ``cfo`` is the local-oscillator offset in Hz expressed at the SoO carrier;
    it is scaled to other carriers proportionally (shared LO).
    """

    id: int
    position: tuple
    clock_offset: float = 0.0
    cfo: float = 0.0
    sco_ppm: float = 0.0
    noise_figure_db: float = 2.0
    rx_gain_db: float = 0.0

    @property
    def sco(self) -> float:
        return self.sco_ppm * 1e-6

    def local_time(self, t: Timestamp, t_start: Timestamp) -> Timestamp:
        """Station clock reading at true time ``t``."""
        rel = t - t_start
        return t.add_seconds(rel * self.sco + self.clock_offset)

    def true_time(self, local: Timestamp, t_start: Timestamp) -> Timestamp:
        """True time at which the station clock reads ``local``."""
        rel = (local - t_start) - self.clock_offset
        return local.add_seconds(-self.clock_offset - rel * self.sco / (1.0 + self.sco))

    def cfo_at(self, carrier: float, reference_carrier: float) -> float:
        return self.cfo * carrier / reference_carrier


@dataclass(frozen=True)
class EmitterConfig:
    position: tuple
    tx_power_dbm: float = 14.0
    carrier: float = 868.0e6

    def validate(self, path="emitter"):
        if not self.carrier > 0:
            raise ChannelError(f"{path}.carrier: must be positive")
        if not math.isfinite(self.tx_power_dbm):
            raise ChannelError(f"{path}.tx_power_dbm: must be finite")


def geometric_delay(emitter_pos, station_pos) -> float:
    """Line-of-sight propagation delay in seconds."""
    a = np.asarray(emitter_pos, dtype=np.float64)
    b = np.asarray(station_pos, dtype=np.float64)
    return float(np.linalg.norm(a - b)) / C


def fspl_db(distance: float, carrier: float) -> float:
    return 20.0 * math.log10(4.0 * math.pi * distance * carrier / C)


def rssi_model(tx_power_dbm: float, distance: float, carrier: float,
               exponent: float = 2.7, d0: float = 1.0) -> float:
    """Log-distance path loss: free space up to ``d0``, then ``10 n log10(d/d0)``."""
    if not distance > 0:
        raise ChannelError("distance must be positive")
    return tx_power_dbm - (fspl_db(d0, carrier) + 10.0 * exponent * math.log10(distance / d0))


def thermal_noise_dbm(sample_rate: float, noise_figure_db: float) -> float:
    """Noise power per complex sample over the full sampled bandwidth."""
    return BOLTZMANN_DBM_HZ + 10.0 * math.log10(sample_rate) + noise_figure_db


def dbm_to_power(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


def stream_rng(seed: int, *names) -> np.random.Generator:
    """Independent named PRNG stream derived from the master seed."""
    keys = [int(seed) & 0xFFFFFFFF]
    for name in names:
        if isinstance(name, str):
            keys.append(zlib.crc32(name.encode()))
        else:
            keys.append(int(name) & 0xFFFFFFFFFFFFFFFF)
    return np.random.default_rng(keys)


@dataclass
class ReceivedLevels:
    """Signal and noise levels applied to one station channel."""

    signal_dbm: float
    noise_dbm: float

    @property
    def snr_db(self) -> float:
        return self.signal_dbm - self.noise_dbm


def channel_levels(scenario, station: StationConfig, channel_id: int) -> ReceivedLevels:
    noise = thermal_noise_dbm(scenario.f_s, station.noise_figure_db)
    if channel_id == CH_SOO:
        return ReceivedLevels(noise + scenario.es_n0_db, noise)
    em = scenario.lpwan_emitter
    d = max(np.linalg.norm(np.subtract(em.position, station.position)), 1e-3)
    rssi = rssi_model(em.tx_power_dbm, d, em.carrier, scenario.path_loss_exponent)
    return ReceivedLevels(rssi + station.rx_gain_db, noise)


def propagate(signal: BasebandSignal, scenario, station_id: int, channel_id: int, *,
              t0: Timestamp | None = None, n_samples: int | None = None,
              rng: np.random.Generator | None = None, noise: bool = True,
              scale: bool = True) -> BasebandSignal:
    """Receive ``signal`` at one station channel.

    The result is sampled on the station's own clock starting at local time
    ``t0`` (default: local arrival time of the first transmitted sample,
    floored to a nanosecond). Geometric delay, clock offset and sampling
    clock offset enter through a single time-varying windowed-sinc
    evaluation; CFO rotation, amplitude scaling and AWGN follow.
    """
    if abs(signal.sample_rate - scenario.f_s) > 1e-9 * scenario.f_s:
        raise ChannelError(
            f"signal rate {signal.sample_rate} Hz does not match scenario f_s {scenario.f_s} Hz"
        )
    station = scenario.station(station_id)
    emitter = scenario.soo_emitter if channel_id == CH_SOO else scenario.lpwan_emitter
    fs = scenario.f_s
    t_start = scenario.t_start
    g = geometric_delay(emitter.position, station.position)
    d = station.sco

    if t0 is None:
        t0 = Timestamp(station.local_time(signal.t0.add_seconds(g), t_start).floor_ns())
    if n_samples is None:
        n_samples = len(signal) + int(math.ceil(2e-3 * fs))

    # true time of local sample n, relative to the source's first sample
    u0 = t0 - t_start
    offset = (t0 - signal.t0) - station.clock_offset - (u0 - station.clock_offset) * d / (1.0 + d)
    n = np.arange(n_samples, dtype=np.float64)
    rel = offset + (n / fs) / (1.0 + d)
    paths = scenario.multipath or ((0.0, 1.0),)
    out = np.zeros(n_samples, dtype=np.complex128)
    for extra_delay, gain in paths:
        pos = (rel - g - extra_delay) * signal.sample_rate
        out += gain * kernels.sinc_interp(signal.samples, pos)

    levels = channel_levels(scenario, station, channel_id)
    if scale:
        out *= math.sqrt(dbm_to_power(levels.signal_dbm))

    eps = station.cfo_at(emitter.carrier, scenario.soo_emitter.carrier)
    if eps or scenario.phase_noise_std:
        t_rel = (u0 - station.clock_offset) / (1.0 + d) + rel - offset
        phase = 2.0 * np.pi * eps * t_rel
        if scenario.phase_noise_std:
            prng = stream_rng(scenario.seed, "phase", station_id, t0.ns)
            steps = prng.standard_normal(n_samples) * scenario.phase_noise_std / math.sqrt(fs)
            phase = phase + np.cumsum(steps)
        out *= np.exp(1j * phase)

    if noise:
        if rng is None:
            rng = stream_rng(scenario.seed, "noise", station_id, channel_id, t0.ns)
        sigma = math.sqrt(dbm_to_power(levels.noise_dbm) / 2.0)
        out += sigma * (rng.standard_normal(n_samples) + 1j * rng.standard_normal(n_samples))
    return BasebandSignal(out, fs, t0)


def tau_truth(scenario, ref_id: int, remote_id: int, ref_local: Timestamp) -> float:
    """True remote-minus-reference clock difference at reference time ``ref_local``."""
    ref = scenario.station(ref_id)
    rem = scenario.station(remote_id)
    t = ref.true_time(ref_local, scenario.t_start)
    return rem.local_time(t, scenario.t_start) - ref.local_time(t, scenario.t_start)


__all__ = [
    "C",
    "CH_LPWAN",
    "CH_SOO",
    "ChannelError",
    "EmitterConfig",
    "ReceivedLevels",
    "StationConfig",
    "channel_levels",
    "dbm_to_power",
    "fspl_db",
    "geometric_delay",
    "propagate",
    "rssi_model",
    "stream_rng",
    "tau_truth",
    "thermal_noise_dbm",
]
