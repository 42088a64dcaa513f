"""Transmit waveforms: TSMA-split LPWAN telegrams and an OFDM SoO surrogate.

Telegrams are split into ``n_bursts`` short pi/2-BPSK bursts with
root-raised-cosine pulses, hopped pseudo-randomly in time and frequency.
Each burst starts with a known pilot sequence; the frame carried in the
remaining symbols is ``[length byte | payload | CRC-16]``.
"""

from __future__ import annotations

import binascii
import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.signal import upfirdn

from .signal import BasebandSignal, Timestamp

#: Receiver bandwidth shared by both frontend channels (Hz).
BANDWIDTH = 1.536e6

#: Known pilot symbols at the start of every burst.
PILOT = np.array([1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1], dtype=np.float64)

DEFAULT_SLOTS = tuple(float(f) for f in (np.arange(8) - 3.5) * 100e3)

MAX_HOP_ATTEMPTS = 100


class WaveformError(ValueError):
    """Invalid waveform specification."""


class SlotCollisionError(WaveformError):
    """No collision-free hop pattern found for the given seed."""


@dataclass(frozen=True)
class TelegramSpec:
    payload: bytes = b"cran-sim telegram"
    n_bursts: int = 24
    burst_len: int = 11000
    hop_pattern_seed: int = 7
    symbol_rate: float = 8000.0
    freq_slots: tuple = DEFAULT_SLOTS
    sample_rate: float = 2.0e6
    rolloff: float = 0.25
    span: int = 8
    time_spread: float = 1.5
    bandwidth: float = BANDWIDTH

    @property
    def sps(self) -> int:
        return int(round(self.sample_rate / self.symbol_rate))

    @property
    def symbols_per_burst(self) -> int:
        return self.burst_len // self.sps - self.span

    @property
    def data_symbols_per_burst(self) -> int:
        return self.symbols_per_burst - PILOT.size

    @property
    def capacity_bits(self) -> int:
        return self.n_bursts * self.data_symbols_per_burst

    @property
    def occupied_bandwidth(self) -> float:
        return (1.0 + self.rolloff) * self.symbol_rate

    def with_payload(self, payload: bytes) -> "TelegramSpec":
        return replace(self, payload=bytes(payload))

    def validate(self) -> None:
        if not 1 <= len(self.payload) <= 255:
            raise WaveformError("payload must hold 1 to 255 bytes")
        if self.n_bursts < 2:
            raise WaveformError("n_bursts must be at least 2")
        if self.symbol_rate <= 0 or self.sample_rate <= 0:
            raise WaveformError("rates must be positive")
        if abs(self.sample_rate / self.symbol_rate - self.sps) > 1e-9 * self.sps:
            raise WaveformError("sample_rate must be an integer multiple of symbol_rate")
        if self.burst_len % self.sps:
            raise WaveformError("burst_len must be a whole number of symbols")
        if self.data_symbols_per_burst < 1:
            raise WaveformError("burst too short for pilot plus data")
        if not self.freq_slots:
            raise WaveformError("at least one frequency slot required")
        edge = self.bandwidth / 2
        for f in self.freq_slots:
            if abs(f) + self.occupied_bandwidth / 2 > edge:
                raise WaveformError(f"frequency slot {f} Hz exceeds +-{edge} Hz")
        if 8 * (len(self.payload) + 3) > self.capacity_bits:
            raise WaveformError(
                f"frame of {len(self.payload) + 3} bytes exceeds capacity of "
                f"{self.capacity_bits // 8} bytes"
            )


@dataclass(frozen=True)
class BurstSchedule:
    """Ground-truth placement of each burst within the telegram.

    ``starts`` are sample offsets from the telegram start; ``slots`` index
    into ``spec.freq_slots``.
    """

    starts: np.ndarray
    slots: np.ndarray
    freqs: np.ndarray
    burst_len: int

    @property
    def length(self) -> int:
        return int(self.starts.max()) + self.burst_len


@dataclass(frozen=True)
class SooSpec:
    n_fft: int = 2048
    n_active_carriers: int = 1500
    cp_len: int = 256
    constellation_seed: int = 1
    sample_rate: float = float(2**21)

    @property
    def occupied_bandwidth(self) -> float:
        return self.n_active_carriers * self.sample_rate / self.n_fft

    @staticmethod
    def max_active(sample_rate: float, n_fft: int = 2048, bandwidth: float = BANDWIDTH) -> int:
        """Largest carrier count whose occupied bandwidth fits ``bandwidth``."""
        return int(math.floor(bandwidth * n_fft / sample_rate + 1e-9))

    def validate(self) -> None:
        if self.n_fft < 2 or self.cp_len < 0 or self.sample_rate <= 0:
            raise WaveformError("invalid OFDM dimensions")
        if not 1 <= self.n_active_carriers < self.n_fft:
            raise WaveformError("n_active_carriers must be in [1, n_fft)")
        if self.occupied_bandwidth > BANDWIDTH * (1 + 1e-12):
            raise WaveformError(
                f"occupied bandwidth {self.occupied_bandwidth:.0f} Hz exceeds {BANDWIDTH:.0f} Hz"
            )


@lru_cache(maxsize=16)
def rrc_taps(sps: int, span: int, rolloff: float) -> np.ndarray:
    """Unit-energy root-raised-cosine filter, ``span * sps + 1`` taps (read-only)."""
    t = (np.arange(span * sps + 1) - span * sps / 2) / sps
    b = rolloff
    with np.errstate(divide="ignore", invalid="ignore"):
        num = np.sin(np.pi * t * (1 - b)) + 4 * b * t * np.cos(np.pi * t * (1 + b))
        h = num / (np.pi * t * (1 - (4 * b * t) ** 2))
    h[np.abs(t) < 1e-12] = 1.0 - b + 4 * b / np.pi
    if b > 0:
        edge = np.abs(np.abs(t) - 1 / (4 * b)) < 1e-9
        h[edge] = (b / np.sqrt(2)) * (
            (1 + 2 / np.pi) * np.sin(np.pi / (4 * b)) + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b))
        )
    h = h / np.sqrt(np.sum(h**2))
    h.setflags(write=False)
    return h


def hop_pattern(spec: TelegramSpec) -> BurstSchedule:
    """Seeded time/frequency hop pattern; redraws on slot collisions."""
    rng = np.random.default_rng([int(spec.hop_pattern_seed), 0x7E5A])
    n = spec.n_bursts
    spacing = spec.time_spread * spec.burst_len
    for _ in range(MAX_HOP_ATTEMPTS):
        slots = rng.integers(0, len(spec.freq_slots), size=n)
        jitter = rng.uniform(-0.5, 0.5, size=n) * spec.burst_len
        starts = np.round(np.arange(n) * spacing + jitter).astype(np.int64)
        starts -= starts.min()
        order = np.argsort(starts, kind="stable")
        starts, slots = starts[order], slots[order]
        if not _collides(starts, slots, spec.burst_len):
            freqs = np.asarray(spec.freq_slots, dtype=np.float64)[slots]
            return BurstSchedule(starts, slots, freqs, spec.burst_len)
    raise SlotCollisionError(
        f"no collision-free pattern after {MAX_HOP_ATTEMPTS} draws (seed {spec.hop_pattern_seed})"
    )


def _collides(starts, slots, burst_len) -> bool:
    for i in range(starts.size):
        for j in range(i + 1, starts.size):
            if starts[j] - starts[i] >= burst_len:
                break
            if slots[i] == slots[j]:
                return True
    return False


def crc16(data: bytes) -> int:
    """CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF)."""
    return binascii.crc_hqx(bytes(data), 0xFFFF)


def frame_bits(payload: bytes, capacity_bits: int) -> np.ndarray:
    """Bits of ``[len | payload | crc16]``, MSB first, zero-padded to capacity."""
    body = bytes([len(payload)]) + bytes(payload)
    frame = body + crc16(body).to_bytes(2, "big")
    bits = np.unpackbits(np.frombuffer(frame, dtype=np.uint8))
    if bits.size > capacity_bits:
        raise WaveformError("frame exceeds burst capacity")
    out = np.zeros(capacity_bits, dtype=np.uint8)
    out[: bits.size] = bits
    return out


def burst_symbols(spec: TelegramSpec, bits: np.ndarray) -> np.ndarray:
    """pi/2-BPSK symbols per burst, shape ``(n_bursts, symbols_per_burst)``."""
    nd = spec.data_symbols_per_burst
    data = 1.0 - 2.0 * bits.reshape(spec.n_bursts, nd).astype(np.float64)
    real = np.concatenate([np.tile(PILOT, (spec.n_bursts, 1)), data], axis=1)
    rot = 1j ** np.arange(spec.symbols_per_burst)
    return real * rot[None, :]


def burst_waveform(spec: TelegramSpec, symbols: np.ndarray, taps=None) -> np.ndarray:
    """Pulse-shaped baseband burst of exactly ``burst_len`` samples."""
    if taps is None:
        taps = rrc_taps(spec.sps, spec.span, spec.rolloff)
    shaped = upfirdn(taps, np.asarray(symbols, dtype=np.complex128), up=spec.sps)
    out = np.zeros(spec.burst_len, dtype=np.complex128)
    n = min(out.size, shaped.size)
    out[:n] = shaped[:n]
    return out


def modulate_bits(spec: TelegramSpec, bits: np.ndarray, schedule: BurstSchedule | None = None,
                  t0: Timestamp | None = None) -> tuple[BasebandSignal, BurstSchedule]:
    """Modulate raw frame bits onto the hop pattern (no framing or CRC added)."""
    if schedule is None:
        schedule = hop_pattern(spec)
    taps = rrc_taps(spec.sps, spec.span, spec.rolloff)
    syms = burst_symbols(spec, np.asarray(bits))
    bursts = [burst_waveform(spec, syms[i], taps) for i in range(spec.n_bursts)]
    power = np.mean([np.mean(np.abs(b) ** 2) for b in bursts])
    gain = 1.0 / np.sqrt(power)
    out = np.zeros(schedule.length, dtype=np.complex128)
    n = np.arange(spec.burst_len)
    for i, b in enumerate(bursts):
        s = int(schedule.starts[i])
        # mixer phase referenced to the telegram start keeps bursts coherent
        mix = np.exp(2j * np.pi * schedule.freqs[i] * (s + n) / spec.sample_rate)
        out[s:s + spec.burst_len] += gain * b * mix
    return BasebandSignal(out, spec.sample_rate, t0 if t0 is not None else Timestamp(0)), schedule


def gen_telegram(spec: TelegramSpec, t0: Timestamp | None = None) -> tuple[BasebandSignal, BurstSchedule]:
    """Generate a TSMA telegram carrying ``spec.payload``.

    Returns the baseband signal (mean burst power 1) and the exact burst
    schedule used to build it.
    """
    spec.validate()
    schedule = hop_pattern(spec)
    bits = frame_bits(spec.payload, spec.capacity_bits)
    return modulate_bits(spec, bits, schedule, t0)


def gen_soo(spec: SooSpec, duration: float, t0: Timestamp | None = None) -> BasebandSignal:
    """Continuous OFDM stream with seeded QPSK carriers and unit mean power."""
    spec.validate()
    n_samples = int(round(duration * spec.sample_rate))
    sym_len = spec.n_fft + spec.cp_len
    if n_samples < sym_len:
        raise WaveformError("duration shorter than one OFDM symbol")
    n_sym = -(-n_samples // sym_len)
    half = spec.n_active_carriers // 2
    carriers = np.concatenate(
        [np.arange(-half, 0), np.arange(1, spec.n_active_carriers - half + 1)]
    ) % spec.n_fft
    rng = np.random.default_rng(int(spec.constellation_seed))
    qpsk = np.exp(1j * (np.pi / 4 + np.pi / 2 * rng.integers(0, 4, size=(n_sym, carriers.size))))
    grid = np.zeros((n_sym, spec.n_fft), dtype=np.complex128)
    grid[:, carriers] = qpsk
    # Parseval: unit-magnitude carriers give exactly unit power per symbol body
    body = np.fft.ifft(grid, axis=1) * (spec.n_fft / np.sqrt(carriers.size))
    if spec.cp_len:
        body = np.concatenate([body[:, -spec.cp_len:], body], axis=1)
    samples = body.reshape(-1)[:n_samples]
    return BasebandSignal(samples, spec.sample_rate, t0 if t0 is not None else Timestamp(0))


def schedule_emitter(interval: float, total: float) -> list[float]:
    """Transmit epochs ``k * interval`` for ``k = 0 .. floor(total / interval)``.

    ``total < interval`` yields the single epoch 0.
    """
    if interval <= 0:
        raise ValueError("interval must be positive")
    if total < 0:
        raise ValueError("total must be non-negative")
    count = int(math.floor(total / interval + 1e-9)) + 1
    return [k * interval for k in range(count)]


__all__ = [
    "BANDWIDTH",
    "BasebandSignal",
    "BurstSchedule",
    "PILOT",
    "SlotCollisionError",
    "SooSpec",
    "TelegramSpec",
    "WaveformError",
    "burst_symbols",
    "burst_waveform",
    "crc16",
    "frame_bits",
    "gen_soo",
    "gen_telegram",
    "hop_pattern",
    "modulate_bits",
    "rrc_taps",
    "schedule_emitter",
]
