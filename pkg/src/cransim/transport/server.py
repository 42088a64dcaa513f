"""Station-side request handling and the HTTP front.

``GET /iq?t0=<ns>&dur_ms=<n>&ch=<0|1>[&subband=<k>][&bits=<8|16>]`` returns a
CRIQ frame (``application/octet-stream``); ``GET /status`` returns JSON.

Status codes: 200 complete range, 416 available prefix only (frame flagged
partial), 404 range not captured yet, 410 range evicted or never captured,
400 malformed request. Error bodies are JSON ``{code, message,
available_range}``.
"""

from __future__ import annotations

import errno
import json
import logging
import threading
from dataclasses import dataclass
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlsplit

import numpy as np

from ..frontend import block_spectra, quantize_array, subband_bins
from .store import RingStore
from .wire import FLAG_COMPRESSED, FLAG_PARTIAL, FLAG_SUBBAND, IqResponseFrame, encode_frame

log = logging.getLogger(__name__)

OCTET = "application/octet-stream"


class TransportError(RuntimeError):
    pass


@dataclass(frozen=True)
class IqRequest:
    t0: int
    duration_ms: int
    channel_id: int
    subband: int | None = None
    bits: int = 16

    def validate(self):
        if self.duration_ms < 1:
            raise ValueError("dur_ms must be >= 1")
        if self.channel_id not in (0, 1):
            raise ValueError("ch must be 0 or 1")
        if self.bits not in (8, 16):
            raise ValueError("bits must be 8 or 16")
        if self.t0 < 0:
            raise ValueError("t0 must be non-negative")
        if self.subband is not None and self.subband < 0:
            raise ValueError("subband must be non-negative")

    def query(self) -> str:
        q = f"/iq?t0={self.t0}&dur_ms={self.duration_ms}&ch={self.channel_id}"
        if self.subband is not None:
            q += f"&subband={self.subband}"
        return q + f"&bits={self.bits}"

    @classmethod
    def from_query(cls, query: str) -> "IqRequest":
        params = parse_qs(query, strict_parsing=False, keep_blank_values=True)
        allowed = {"t0", "dur_ms", "ch", "subband", "bits"}
        unknown = set(params) - allowed
        if unknown:
            raise ValueError(f"unknown parameters {sorted(unknown)}")

        def one(name, required=True, default=None):
            if name not in params:
                if required:
                    raise ValueError(f"missing parameter {name}")
                return default
            vals = params[name]
            if len(vals) != 1:
                raise ValueError(f"repeated parameter {name}")
            try:
                return int(vals[0])
            except ValueError:
                raise ValueError(f"parameter {name} must be an integer") from None

        req = cls(one("t0"), one("dur_ms"), one("ch"), one("subband", False), one("bits", False, 16))
        req.validate()
        return req


@dataclass
class Response:
    status: int
    content_type: str
    body: bytes
    headers: dict


def n_request_samples(duration_ms: int, f_res: float) -> int:
    return int(round(duration_ms * f_res / 1000.0))


def _range(store, ch):
    r = store.retained_range(ch)
    if r is None:
        return None
    return [r[0].ns, r[1].ceil_ns()]


def _error(status: int, message: str, available) -> Response:
    body = json.dumps({"code": status, "message": message, "available_range": available}).encode()
    return Response(status, "application/json", body, {})


class StationServer:
    """Stateless request handler over a :class:`RingStore`."""

    def __init__(self, store: RingStore, station_id: int, f_res: float, *, n_subbands: int = 8,
                 fft_len: int = 2**14, compress: bool = False):
        self.store = store
        self.station_id = station_id
        self.f_res = f_res
        self.n_subbands = n_subbands
        self.fft_len = fft_len
        self.compress = compress
        self._httpd = None
        self._thread = None

    # request handling -------------------------------------------------
    def handle_request(self, req: IqRequest) -> Response:
        try:
            req.validate()
        except ValueError as exc:
            return _error(400, str(exc), None)
        if req.subband is not None and req.subband >= self.n_subbands:
            return _error(400, f"subband {req.subband} outside 0..{self.n_subbands - 1}",
                          _range(self.store, req.channel_id))
        n = n_request_samples(req.duration_ms, self.f_res)
        if req.subband is not None:
            n = -(-n // self.fft_len) * self.fft_len
        look = self.store.fetch(req.channel_id, req.t0, n)
        available = _range(self.store, req.channel_id)
        if look.status == "future":
            return _error(404, "requested range not captured yet", available)
        if look.status == "gone":
            return _error(410, "requested range no longer available", available)

        samples = look.samples
        flags = 0
        status = 200
        if look.status == "partial":
            flags |= FLAG_PARTIAL
            status = 416
        if req.subband is not None:
            n_blocks = samples.size // self.fft_len
            if n_blocks == 0:
                return _error(404, "less than one FFT block captured", available)
            spectra = block_spectra(samples[: n_blocks * self.fft_len], self.fft_len)
            values = spectra[:, subband_bins(self.n_subbands, self.fft_len, req.subband)].reshape(-1)
            flags |= FLAG_SUBBAND
        else:
            values = samples
        payload, scale = quantize_array(values, req.bits)
        if self.compress:
            flags |= FLAG_COMPRESSED
        frame = IqResponseFrame(
            flags=flags,
            channel=req.channel_id,
            bits=req.bits,
            sample_rate=int(round(look.sample_rate)),
            t0=look.t0.ns,
            frac_t0=float(np.float32(look.t0.frac)),
            n_samples=values.size,
            scale=scale,
            payload=payload,
        )
        headers = {}
        if status == 416:
            headers["X-Available-Range"] = json.dumps(available)
        return Response(status, OCTET, encode_frame(frame), headers)

    def status(self) -> dict:
        retained = {str(ch): _range(self.store, ch) for ch in self.store.channels()}
        return {
            "station_id": self.station_id,
            "retained_range_per_channel": retained,
            "f_res": self.f_res,
            "n_subbands": self.n_subbands,
            "fft_len": self.fft_len,
        }

    def handle(self, target: str) -> Response:
        """Dispatch a request target such as ``/iq?t0=...``."""
        parts = urlsplit(target)
        if parts.path == "/status":
            return Response(200, "application/json", json.dumps(self.status()).encode(), {})
        if parts.path != "/iq":
            return _error(404, f"no such endpoint {parts.path}", None)
        try:
            req = IqRequest.from_query(parts.query)
        except ValueError as exc:
            return _error(400, str(exc), None)
        return self.handle_request(req)

    # HTTP front -------------------------------------------------------
    def serve(self, host: str = "127.0.0.1", port: int = 0) -> str:
        """Start a threaded HTTP server in the background; returns its base URL."""
        handler = _make_handler(self)
        try:
            httpd = ThreadingHTTPServer((host, port), handler)
        except OSError as exc:
            if exc.errno == errno.EADDRINUSE:
                raise TransportError(f"port {port} already in use") from exc
            raise
        httpd.daemon_threads = True
        self._httpd = httpd
        self._thread = threading.Thread(target=httpd.serve_forever, name=f"bs{self.station_id}-http",
                                        daemon=True)
        self._thread.start()
        h, p = httpd.server_address[:2]
        return f"http://{h}:{p}"

    def shutdown(self):
        if self._httpd is not None:
            self._httpd.shutdown()
            self._httpd.server_close()
            self._httpd = None


def _make_handler(server: StationServer):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def do_GET(self):  # noqa: N802
            resp = server.handle(self.path)
            self.send_response(resp.status, HTTPStatus(resp.status).phrase)
            self.send_header("Content-Type", resp.content_type)
            self.send_header("Content-Length", str(len(resp.body)))
            for k, v in resp.headers.items():
                self.send_header(k, v)
            self.end_headers()
            self.wfile.write(resp.body)

        def log_message(self, fmt, *args):
            log.debug("bs%s %s", server.station_id, fmt % args)

    return Handler
