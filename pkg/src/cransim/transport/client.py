"""Aggregator-side IQ client."""

from __future__ import annotations

import json
import logging
import math
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, replace

import numpy as np

from ..frontend import block_samples, dequantize_array, subband_bins
from ..signal import BasebandSignal, Timestamp
from .server import IqRequest, StationServer, n_request_samples
from .wire import decode_frame

log = logging.getLogger(__name__)

CHUNK_MS = 1000
BACKOFF_BASE = 0.1
BACKOFF_CAP = 2.0
MAX_ATTEMPTS = 10


class FetchError(RuntimeError):
    def __init__(self, message, status=None, body=None):
        super().__init__(message)
        self.status = status
        self.body = body


class RetriesExhausted(FetchError):
    pass


class RangeEvicted(FetchError):
    pass


class DiscontinuityError(FetchError):
    pass


class LocalEndpoint:
    """In-process endpoint calling the station handler directly."""

    def __init__(self, server: StationServer):
        self.server = server

    def get(self, target: str):
        r = self.server.handle(target)
        return r.status, r.headers, r.body


class HttpEndpoint:
    def __init__(self, base_url: str, timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def get(self, target: str):
        try:
            with urllib.request.urlopen(self.base_url + target, timeout=self.timeout) as resp:
                return resp.status, dict(resp.headers), resp.read()
        except urllib.error.HTTPError as exc:
            return exc.code, dict(exc.headers), exc.read()


def station_status(endpoint) -> dict:
    status, _, body = endpoint.get("/status")
    if status != 200:
        raise FetchError(f"status endpoint returned {status}", status, body)
    return json.loads(body)


def backoff_delays(base=BACKOFF_BASE, cap=BACKOFF_CAP, attempts=MAX_ATTEMPTS):
    return [min(cap, base * 2**i) for i in range(attempts - 1)]


@dataclass
class _Chunk:
    t0: Timestamp
    values: np.ndarray
    rate: float
    n_time: int


def _request_chunk(endpoint, req: IqRequest, sleep, layout):
    delays = backoff_delays()
    for attempt in range(MAX_ATTEMPTS):
        status, _, body = endpoint.get(req.query())
        if status in (200, 416):
            frame = decode_frame(body)
            vals = dequantize_array(frame.payload, frame.scale, frame.bits)
            t0 = Timestamp(frame.t0, frame.frac_t0)
            if frame.subband:
                fft_len, n_sb = layout
                width = fft_len // n_sb
                n_blocks = vals.size // width
                spectra = np.zeros((n_blocks, fft_len), dtype=np.complex128)
                spectra[:, subband_bins(n_sb, fft_len, req.subband)] = vals.reshape(n_blocks, width)
                vals = block_samples(spectra)
            return _Chunk(t0, vals, float(frame.sample_rate), vals.size), status == 416
        if status == 404:
            if attempt < MAX_ATTEMPTS - 1:
                sleep(delays[attempt])
            continue
        if status == 410:
            raise RangeEvicted("requested range evicted at station", status, body)
        raise FetchError(f"station answered {status}: {body[:200]!r}", status, body)
    raise RetriesExhausted(f"range still unavailable after {MAX_ATTEMPTS} attempts", 404)


def fetch_iq(endpoint, req: IqRequest, *, sleep=time.sleep, f_res: float | None = None,
             layout=None) -> BasebandSignal:
    """Fetch ``req`` as one contiguous signal, splitting into <= 1 s chunks.

    404 answers are retried with capped exponential backoff; a 410 fails
    immediately. Chunks must join without timestamp gaps.
    """
    req.validate()
    if f_res is None or (req.subband is not None and layout is None):
        st = station_status(endpoint)
        f_res = f_res or float(st["f_res"])
        layout = layout or (int(st["fft_len"]), int(st["n_subbands"]))
    total = n_request_samples(req.duration_ms, f_res)
    if req.subband is not None:
        total = -(-total // layout[0]) * layout[0]
    pieces = []
    have = 0
    start: Timestamp | None = None
    next_t: Timestamp | None = None
    t_req = req.t0
    while have < total:
        dur = min(CHUNK_MS, max(1, math.ceil((total - have) * 1000.0 / f_res - 1e-9)))
        chunk, partial = _request_chunk(endpoint, replace(req, t0=t_req, duration_ms=dur), sleep, layout)
        if next_t is not None and abs((chunk.t0 - next_t) * chunk.rate) > 1e-3:
            raise DiscontinuityError(f"gap between chunks: expected {next_t}, got {chunk.t0}")
        if start is None:
            start = chunk.t0
        take = min(chunk.n_time, total - have)
        if take <= 0:
            raise DiscontinuityError("station returned an empty chunk")
        pieces.append(chunk.values[:take])
        have += take
        next_t = chunk.t0.add_seconds(take / chunk.rate)
        # ceil keeps the server's snap-down from landing on the previous sample
        t_req = next_t.ceil_ns()
        if partial and have < total:
            log.debug("partial chunk, %d of %d samples", have, total)
    return BasebandSignal(np.concatenate(pieces), f_res, start)
