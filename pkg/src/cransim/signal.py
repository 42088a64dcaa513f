"""Timestamps and timestamped baseband sample containers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, order=True)
class Timestamp:
    """Epoch time as integer nanoseconds plus a fractional nanosecond.

    ``frac`` is normalized into ``[0, 1)``. Differences are computed on the
    integer part first so sub-nanosecond resolution survives large epochs.
    """

    ns: int
    frac: float = 0.0

    def __post_init__(self):
        ns = int(self.ns)
        frac = float(self.frac)
        if not math.isfinite(frac):
            raise ValueError("fractional nanoseconds must be finite")
        whole = math.floor(frac)
        object.__setattr__(self, "ns", ns + int(whole))
        object.__setattr__(self, "frac", frac - whole)

    @classmethod
    def from_ns(cls, value: float) -> "Timestamp":
        whole = math.floor(value)
        return cls(int(whole), value - whole)

    def add_ns(self, delta: float) -> "Timestamp":
        whole = math.floor(delta)
        return Timestamp(self.ns + int(whole), self.frac + (delta - whole))

    def add_seconds(self, delta: float) -> "Timestamp":
        return self.add_ns(delta * 1e9)

    def __sub__(self, other: "Timestamp") -> float:
        """Difference in seconds."""
        return ((self.ns - other.ns) + (self.frac - other.frac)) * 1e-9

    def ns_float(self) -> float:
        return self.ns + self.frac

    def floor_ns(self) -> int:
        return self.ns

    def ceil_ns(self) -> int:
        return self.ns + (1 if self.frac > 0.0 else 0)


@dataclass
class BasebandSignal:
    """Complex baseband samples with sample rate and start time.

    ``t0`` is the time of ``samples[0]``; sample ``k`` sits at
    ``t0 + k / sample_rate``.
    """

    samples: np.ndarray
    sample_rate: float
    t0: Timestamp = field(default_factory=lambda: Timestamp(0))

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        if self.samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        if not isinstance(self.t0, Timestamp):
            self.t0 = Timestamp.from_ns(float(self.t0))

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    @property
    def t_end(self) -> Timestamp:
        return self.t0.add_seconds(self.duration)

    def time_of(self, index: float) -> Timestamp:
        return self.t0.add_seconds(index / self.sample_rate)

    def index_of(self, t: Timestamp) -> float:
        """Fractional sample index of time ``t``."""
        return (t - self.t0) * self.sample_rate

    def power(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2)) if self.samples.size else 0.0

    def slice(self, start: int, stop: int) -> "BasebandSignal":
        start = max(0, int(start))
        stop = min(self.samples.size, int(stop))
        return BasebandSignal(self.samples[start:stop].copy(), self.sample_rate, self.time_of(start))

    def with_samples(self, samples) -> "BasebandSignal":
        return BasebandSignal(samples, self.sample_rate, self.t0)
