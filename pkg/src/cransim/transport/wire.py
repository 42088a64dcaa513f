"""``CRIQ`` response frame: fixed 32-byte little-endian header plus payload.

=======  ====  ==========================================
offset   size  field
=======  ====  ==========================================
0        4     magic ``b"CRIQ"``
4        1     version (1)
5        1     flags (bit0 compressed, bit1 subband, bit2 partial)
6        1     channel
7        1     bits (8 or 16)
8        4     sample_rate, u32 Hz
12       8     t0, u64 ns
20       4     frac_t0, f32 ns
24       4     n_samples, u32
28       4     scale, f32
32       ...   payload
=======  ====  ==========================================
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ..frontend import compress, decompress

MAGIC = b"CRIQ"
VERSION = 1
HEADER = struct.Struct("<4sBBBBIQfIf")

FLAG_COMPRESSED = 0x01
FLAG_SUBBAND = 0x02
FLAG_PARTIAL = 0x04


class WireError(ValueError):
    pass


@dataclass(frozen=True)
class IqResponseFrame:
    """Decoded response; ``payload`` holds interleaved signed I/Q integers."""

    flags: int
    channel: int
    bits: int
    sample_rate: int
    t0: int
    frac_t0: float
    n_samples: int
    scale: float
    payload: np.ndarray

    @property
    def compressed(self) -> bool:
        return bool(self.flags & FLAG_COMPRESSED)

    @property
    def subband(self) -> bool:
        return bool(self.flags & FLAG_SUBBAND)

    @property
    def partial(self) -> bool:
        return bool(self.flags & FLAG_PARTIAL)

    def __eq__(self, other):
        if not isinstance(other, IqResponseFrame):
            return NotImplemented
        head = (self.flags, self.channel, self.bits, self.sample_rate, self.t0, self.frac_t0,
                self.n_samples, self.scale)
        other_head = (other.flags, other.channel, other.bits, other.sample_rate, other.t0,
                      other.frac_t0, other.n_samples, other.scale)
        return head == other_head and np.array_equal(self.payload, other.payload)

    __hash__ = None


def _dtype(bits: int):
    if bits == 8:
        return np.dtype("<i1")
    if bits == 16:
        return np.dtype("<i2")
    raise WireError(f"unsupported sample width {bits}")


def encode_frame(frame: IqResponseFrame) -> bytes:
    payload = np.asarray(frame.payload)
    if payload.size != 2 * frame.n_samples:
        raise WireError("payload length does not match n_samples")
    raw = payload.astype(_dtype(frame.bits), copy=False).tobytes()
    if frame.compressed:
        raw = compress(raw)
    head = HEADER.pack(MAGIC, VERSION, frame.flags, frame.channel, frame.bits, frame.sample_rate,
                       frame.t0, frame.frac_t0, frame.n_samples, frame.scale)
    return head + raw


def decode_frame(data: bytes) -> IqResponseFrame:
    data = bytes(data)
    if len(data) < HEADER.size:
        raise WireError("truncated header")
    if data[:4] != MAGIC:
        raise WireError("bad magic")
    if data[4] != VERSION:
        raise WireError(f"unsupported version {data[4]}")
    _, _, flags, channel, bits, rate, t0, frac, n, scale = HEADER.unpack_from(data)
    raw = data[HEADER.size:]
    if flags & FLAG_COMPRESSED:
        raw = decompress(raw)
    dt = _dtype(bits)
    if len(raw) != 2 * n * dt.itemsize:
        raise WireError(f"payload holds {len(raw)} bytes, header declares {n} samples")
    payload = np.frombuffer(raw, dtype=dt).astype(dt.newbyteorder("="))
    return IqResponseFrame(flags, channel, bits, rate, t0, frac, n, scale, payload)
