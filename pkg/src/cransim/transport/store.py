"""Ring-buffered IQ store: one writer, many readers, immutable blocks."""

from __future__ import annotations

import bisect
import threading
from dataclasses import dataclass

import numpy as np

from ..frontend import QuantizedBlock, dequantize_array
from ..signal import Timestamp


class StoreError(ValueError):
    pass


class OutOfOrderError(StoreError):
    pass


@dataclass(frozen=True)
class Lookup:
    """Result of a range query.

    ``status`` is one of ``"ok"``, ``"partial"``, ``"future"``, ``"gone"``.
    """

    status: str
    t0: Timestamp | None = None
    samples: np.ndarray | None = None
    sample_rate: float = 0.0


class RingStore:
    """Per-channel sequence of time-ordered blocks bounded by ``capacity`` seconds.

    Blocks may leave gaps (capture windows); samples never straddle a gap
    in a returned range.
    """

    def __init__(self, capacity: float = 120.0):
        if capacity <= 0:
            raise StoreError("capacity must be positive")
        self.capacity = capacity
        self._lock = threading.Lock()
        self._blocks: dict[int, tuple] = {}

    def store_block(self, channel_id: int, block: QuantizedBlock) -> None:
        with self._lock:
            blocks = self._blocks.get(channel_id, ())
            if blocks:
                last = blocks[-1]
                if not block.block_ts > last.block_ts:
                    raise OutOfOrderError(
                        f"block at {block.block_ts} not after last stored block {last.block_ts}"
                    )
                if (block.block_ts - last.t_end) < -0.5 / block.sample_rate:
                    raise OutOfOrderError("block overlaps the previous block")
            blocks = blocks + (block,)
            newest = block.t_end
            drop = 0
            while drop < len(blocks) and (newest - blocks[drop].block_ts) > self.capacity + 1e-12:
                drop += 1
            # readers keep whatever tuple they grabbed; replacement is atomic
            self._blocks[channel_id] = blocks[drop:]

    def blocks(self, channel_id: int) -> tuple:
        with self._lock:
            return self._blocks.get(channel_id, ())

    def retained_range(self, channel_id: int):
        blocks = self.blocks(channel_id)
        if not blocks:
            return None
        return blocks[0].block_ts, blocks[-1].t_end

    def channels(self) -> list[int]:
        with self._lock:
            return sorted(self._blocks)

    def sample_rate(self, channel_id: int) -> float | None:
        blocks = self.blocks(channel_id)
        return blocks[0].sample_rate if blocks else None

    def fetch(self, channel_id: int, t0_ns: int, n_samples: int) -> Lookup:
        """Samples covering ``n_samples`` from the sample at or before ``t0_ns``."""
        blocks = self.blocks(channel_id)
        if not blocks:
            return Lookup("future")
        t = Timestamp(t0_ns)
        if not t < blocks[-1].t_end:
            return Lookup("future")
        starts = [b.block_ts for b in blocks]
        i = bisect.bisect_right(starts, t) - 1
        if i < 0:
            return Lookup("gone")
        first = blocks[i]
        rate = first.sample_rate
        k = int(np.floor((t - first.block_ts) * rate + 1e-6))
        if k >= first.n_samples:
            return Lookup("gone")
        start_ts = first.block_ts.add_seconds(k / rate)
        pieces = []
        have = 0
        j = i
        offset = k
        while have < n_samples and j < len(blocks):
            blk = blocks[j]
            if j > i:
                gap = (blk.block_ts - blocks[j - 1].t_end) * rate
                if abs(gap) > 1e-3:
                    break
            take = min(blk.n_samples - offset, n_samples - have)
            iq = dequantize_array(blk.payload[2 * offset:2 * (offset + take)], blk.scale, blk.bits)
            pieces.append(iq)
            have += take
            offset = 0
            j += 1
        samples = np.concatenate(pieces)
        status = "ok" if have == n_samples else "partial"
        return Lookup(status, start_ts, samples, rate)
