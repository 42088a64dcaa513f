"""LPWAN telegram detection, demodulation and report generation.

Detection correlates the burst pilot against every frequency slot with one
FFT-domain channelizer, normalizes each slot by its noise floor and sums
the per-burst magnitudes along the hop pattern. On noise the summed metric
is Gamma(n_bursts, 1) distributed, which sets the threshold.

Decoding aligns each burst, estimates a telegram-wide CFO, carrier phase
and fractional delay from per-burst correlation phases (the hop slots span
several hundred kHz, so the phases pin the delay far below a sample), then
matched-filters and slices the symbols. A second pass re-modulates the
decided bits and repeats the phase fit data-aided for the reported ToA and
RSSI.
"""

from __future__ import annotations

import json
import logging
import math
import threading
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import fft as sfft
from scipy.signal import oaconvolve
from scipy.stats import gamma

from . import kernels
from .signal import BasebandSignal, Timestamp
from .waveforms import (
    PILOT,
    BurstSchedule,
    TelegramSpec,
    burst_waveform,
    crc16,
    hop_pattern,
    modulate_bits,
    rrc_taps,
)

log = logging.getLogger(__name__)

#: Default false-alarm probability per telegram-duration window on noise.
DEFAULT_PFA = 1e-3

#: Largest CFO searched at the LPWAN carrier (Hz).
DEFAULT_MAX_CFO = 100.0


class DecodeError(RuntimeError):
    """Candidate could not be demodulated (e.g. telegram not inside the stream)."""


@dataclass(frozen=True)
class Candidate:
    """Detected telegram start: stream sample index, time and metric."""

    index: int
    toa: Timestamp
    metric: float
    threshold: float


@dataclass
class TelegramReport:
    station_id: int
    toa: Timestamp
    rssi_dbm: float
    snr_db: float
    payload: bytes
    crc_ok: bool
    topic: str = ""
    # decoder-side extras, not part of the JSON record
    toa_sigma: float | None = field(default=None, compare=False)
    cfo_hz: float | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.topic:
            self.topic = report_topic(self.station_id)

    def to_record(self) -> dict:
        return {
            "topic": self.topic,
            "station_id": self.station_id,
            "toa_ns": self.toa.ns,
            "toa_frac_ns": self.toa.frac,
            "rssi_dbm": self.rssi_dbm,
            "snr_db": self.snr_db,
            "payload_hex": self.payload.hex(),
            "crc_ok": self.crc_ok,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "TelegramReport":
        d = json.loads(line)
        return cls(
            station_id=int(d["station_id"]),
            toa=Timestamp(int(d["toa_ns"]), float(d["toa_frac_ns"])),
            rssi_dbm=float(d["rssi_dbm"]),
            snr_db=float(d["snr_db"]),
            payload=bytes.fromhex(d["payload_hex"]),
            crc_ok=bool(d["crc_ok"]),
            topic=d["topic"],
        )


def report_topic(station_id: int) -> str:
    return f"cran/bs{station_id}/uplink"


class ReportSink:
    """Append-only JSON-lines report stream; safe to share between decoders."""

    def __init__(self, fh):
        self._fh = fh
        self._lock = threading.Lock()

    def emit(self, report: TelegramReport) -> None:
        line = report.to_json() + "\n"
        with self._lock:
            self._fh.write(line)
            self._fh.flush()


# --------------------------------------------------------------- templates
def decimation(spec: TelegramSpec) -> int:
    """Channelizer decimation: about ten samples per symbol after decimation."""
    return max(1, spec.sps // 10)


def pilot_template(spec: TelegramSpec) -> np.ndarray:
    """Baseband pilot waveform including the pulse tails (read-only)."""
    return _pilot_template(spec.with_payload(b""))


@lru_cache(maxsize=16)
def _pilot_template(spec: TelegramSpec) -> np.ndarray:
    syms = PILOT * 1j ** np.arange(PILOT.size)
    n = (PILOT.size + spec.span) * spec.sps
    full = burst_waveform(spec, np.concatenate([syms, np.zeros(spec.symbols_per_burst - PILOT.size)]))
    out = full[:n]
    out.setflags(write=False)
    return out


def _mixed(template: np.ndarray, freq: float, start: int, fs: float) -> np.ndarray:
    m = np.arange(template.size)
    return template * np.exp(2j * np.pi * freq * (start + m) / fs)


def _centroids(templates: np.ndarray, fs: float) -> tuple[np.ndarray, np.ndarray]:
    """Energy-weighted spectral centroid (Hz) and time centroid (samples) per row."""
    spec = np.abs(np.fft.fft(templates, axis=1)) ** 2
    freqs = np.fft.fftfreq(templates.shape[1], 1.0 / fs)
    fc = spec @ freqs / spec.sum(axis=1)
    e = np.abs(templates) ** 2
    tc = e @ np.arange(templates.shape[1]) / e.sum(axis=1)
    return fc, tc


# --------------------------------------------------------------- detection
def detection_threshold(spec: TelegramSpec, pfa: float = DEFAULT_PFA,
                        schedule: BurstSchedule | None = None) -> float:
    """Threshold on the summed normalized pilot metric.

    Per position the noise-only metric is a sum of ``n_bursts`` unit
    exponentials; the per-window false-alarm rate is split evenly across the
    decimated positions of one telegram duration (union bound).
    """
    if schedule is None:
        schedule = hop_pattern(spec)
    n_pos = max(1, schedule.length // decimation(spec))
    return float(gamma.isf(pfa / n_pos, spec.n_bursts))


def _slot_correlations(x: np.ndarray, spec: TelegramSpec, template: np.ndarray) -> tuple:
    """Decimated pilot correlation per frequency slot, normalized to unit noise."""
    fs = spec.sample_rate
    d = decimation(spec)
    m = sfft.next_fast_len(-(-(x.size + template.size) // d))
    n = d * m
    spec_x = sfft.fft(x, n)
    band = np.arange(-(m // 2), m - m // 2)
    p_band = np.conj(sfft.fft(template, n)[band % n])
    out = np.empty((len(spec.freq_slots), m), dtype=np.complex128)
    for k, f in enumerate(spec.freq_slots):
        kf = int(round(f * n / fs))
        out[k] = sfft.ifft(sfft.ifftshift(spec_x[(kf + band) % n] * p_band)) / d
    n_valid = max(1, (x.size - template.size) // d + 1)
    power = np.abs(out[:, :n_valid]) ** 2
    noise = np.median(power, axis=1) / math.log(2.0)
    noise[noise <= 0] = 1.0
    return power / noise[:, None], d


def detection_metric(stream: BasebandSignal, spec: TelegramSpec,
                     schedule: BurstSchedule | None = None) -> tuple[np.ndarray, int]:
    """Summed normalized pilot energy for each decimated start position.

    Only start positions whose whole telegram lies inside the stream are
    returned. Also returns the decimation factor.
    """
    if schedule is None:
        schedule = hop_pattern(spec)
    template = pilot_template(spec)
    power, d = _slot_correlations(stream.samples, spec, template)
    offsets = np.rint(schedule.starts / d).astype(np.int64)
    last = stream.samples.size - int(schedule.starts[-1]) - template.size
    n_pos = last // d + 1 if last >= 0 else 0
    n_pos = min(n_pos, power.shape[1] - int(offsets.max()))
    if n_pos <= 0:
        return np.zeros(0), d
    metric = np.zeros(n_pos)
    for off, slot in zip(offsets, schedule.slots):
        metric += power[slot, off:off + n_pos]
    return metric, d


def detect_telegram(stream: BasebandSignal, spec: TelegramSpec, *, pfa: float = DEFAULT_PFA,
                    schedule: BurstSchedule | None = None) -> list[Candidate]:
    """Candidate telegram starts in ``stream``, in time order.

    Peaks above the threshold are taken greedily; each accepted peak
    suppresses one telegram span on either side.
    """
    if stream.sample_rate != spec.sample_rate:
        raise ValueError("stream and telegram sample rates differ")
    if schedule is None:
        schedule = hop_pattern(spec)
    thr = detection_threshold(spec, pfa, schedule)
    metric, d = detection_metric(stream, spec, schedule)
    if metric.size == 0:
        return []
    span = schedule.length // d
    work = metric.copy()
    picks = []
    while True:
        j = int(np.argmax(work))
        if work[j] <= thr:
            break
        picks.append(j)
        work[max(0, j - span):j + span + 1] = -np.inf
    out = []
    for j in sorted(picks):
        idx = j * d
        out.append(Candidate(idx, stream.time_of(idx), float(metric[j]), thr))
    return out


# --------------------------------------------------------------- estimation
def _phase_model(theta, eps, delay, t_c, f_c):
    return theta + 2 * np.pi * eps * t_c - 2 * np.pi * f_c * delay


def fit_phases(z: np.ndarray, t_c: np.ndarray, f_c: np.ndarray, var_phi: np.ndarray,
               init=(None, 0.0, 0.0), iterations: int = 4):
    """Weighted fit of ``arg z_i = theta + 2 pi eps t_i - 2 pi f_i delay``.

    Residuals are wrapped each iteration, so ``init`` must be within a
    fraction of a cycle at every burst. Returns ``(theta, eps, delay, cov)``
    with ``cov`` the 3x3 parameter covariance.
    """
    theta, eps, delay = init
    if theta is None:
        theta = float(np.angle(np.sum(z * np.exp(-1j * _phase_model(0.0, eps, delay, t_c, f_c)))))
    w = 1.0 / var_phi
    a = np.column_stack([np.ones_like(t_c), 2 * np.pi * t_c, -2 * np.pi * f_c])
    aw = a * w[:, None]
    normal = a.T @ aw
    cov = np.linalg.inv(normal)
    for _ in range(iterations):
        res = np.angle(z * np.exp(-1j * _phase_model(theta, eps, delay, t_c, f_c)))
        step = cov @ (aw.T @ res)
        theta += step[0]
        eps += step[1]
        delay += step[2]
    return float(theta), float(eps), float(delay), cov


def slot_cfo_search(z: np.ndarray, t_c: np.ndarray, slots: np.ndarray, max_cfo: float,
                    t_len: float) -> float:
    """CFO from bursts sharing a frequency slot, where the delay term cancels.

    Maximizes ``sum_slots |sum_i z_i exp(-j 2 pi eps t_i)|^2`` on a grid and
    refines the peak parabolically.
    """
    step = 1.0 / (8.0 * t_len)
    epss = np.arange(-max_cfo, max_cfo + step / 2, step)
    ph = np.exp(-2j * np.pi * epss[:, None] * t_c[None, :])
    score = np.zeros(epss.size)
    for k in np.unique(slots):
        sel = slots == k
        score += np.abs(ph[:, sel] @ z[sel]) ** 2
    i = int(np.argmax(score))
    if 0 < i < epss.size - 1:
        y0, y1, y2 = score[i - 1:i + 2]
        den = y0 - 2 * y1 + y2
        if den < 0:
            return float(epss[i] + 0.5 * (y0 - y2) / den * step)
    return float(epss[i])


def _delay_search(z, t_c, f_c, eps, delay0, span, f_span):
    """Coherent delay periodogram ``|sum_i z_i exp(-j(2 pi eps t_i - 2 pi f_i d))|``."""
    step = 1.0 / (16.0 * max(f_span, 1.0))
    delays = delay0 + np.arange(-span, span + step / 2, step)
    zr = z * np.exp(-2j * np.pi * eps * t_c)
    score = np.abs(np.exp(2j * np.pi * delays[:, None] * f_c[None, :]) @ zr)
    return float(delays[int(np.argmax(score))])


def _segments(x: np.ndarray, starts: np.ndarray, length: int, offset: float) -> np.ndarray:
    """Rows ``x[s + offset + m]``, ``m < length``, with fractional ``offset``."""
    if offset == 0.0 and np.all(starts == np.floor(starts)):
        out = np.zeros((starts.size, length), dtype=np.complex128)
        for i, s in enumerate(starts.astype(np.int64)):
            a, b = max(0, s), min(x.size, s + length)
            if b > a:
                out[i, a - s:b - s] = x[a:b]
        return out
    if np.all(starts == np.floor(starts)):
        # one fractional part for every row: a single FIR shift, applied by FFT
        whole = math.floor(offset)
        table = kernels.sinc_table()
        n_phase, n_taps = table.shape[0] - 1, table.shape[1]
        f = (offset - whole) * n_phase
        i0 = min(int(f), n_phase - 1)
        taps = table[i0] + (f - i0) * (table[i0 + 1] - table[i0])
        first = starts.astype(np.int64) + whole - n_taps // 2 + 1
        wide = _segments(x, first.astype(np.float64), length + n_taps - 1, 0.0)
        return oaconvolve(wide, taps[None, ::-1], mode="valid", axes=1)
    pos = (starts[:, None] + offset + np.arange(length)[None, :]).reshape(-1)
    return kernels.sinc_interp(x, pos).reshape(starts.size, length)


def _noise_power(x: np.ndarray, n0: int, schedule: BurstSchedule, guard: int) -> float:
    """Robust noise power from samples outside the detected telegram's bursts."""
    mask = np.ones(x.size, dtype=bool)
    for s in schedule.starts:
        a = max(0, n0 + int(s) - guard)
        b = min(x.size, n0 + int(s) + schedule.burst_len + guard)
        mask[a:b] = False
    quiet = np.abs(x[mask]) ** 2
    if quiet.size < 64:
        quiet = np.abs(x) ** 2
    return float(np.median(quiet) / math.log(2.0))


def _bits_to_frame(bits: np.ndarray) -> tuple[bytes, bool]:
    raw = np.packbits(bits.astype(np.uint8)).tobytes()
    n = raw[0]
    if n == 0 or n + 3 > len(raw):
        return raw[1:], False
    body = raw[: n + 1]
    crc = int.from_bytes(raw[n + 1:n + 3], "big")
    return raw[1:n + 1], crc16(body) == crc


def _integer_refine(x, n_coarse, schedule, templates, search):
    """Noncoherent integer alignment of per-burst templates, plus parabolic fraction."""
    length = templates.shape[1]
    lo = max(0, n_coarse - search)
    hi = min(x.size - int(schedule.starts[-1]) - length, n_coarse + search)
    if hi < lo:
        raise DecodeError("telegram extends beyond the stream")
    wide = _segments(x, lo + schedule.starts.astype(np.float64), hi - lo + length, 0.0)
    corr = oaconvolve(wide, np.conj(templates[:, ::-1]), mode="valid", axes=1)
    total = np.sum(np.abs(corr) ** 2, axis=0)
    k = int(np.argmax(total))
    frac = 0.0
    if 0 < k < total.size - 1:
        y0, y1, y2 = total[k - 1:k + 2]
        den = y0 - 2 * y1 + y2
        if den < 0:
            frac = 0.5 * (y0 - y2) / den
    return lo + k, frac


def _burst_correlations(x, n0, delay_s, spec, schedule, templates, cfo=0.0):
    """Per-burst correlation of aligned, CFO-derotated segments with ``templates``."""
    fs = spec.sample_rate
    length = templates.shape[1]
    seg = _segments(x, n0 + schedule.starts.astype(np.float64), length, delay_s * fs)
    if cfo:
        w = -2j * np.pi * cfo / fs
        seg = seg * np.exp(w * schedule.starts)[:, None] * np.exp(w * np.arange(length))[None, :]
    return np.sum(seg * np.conj(templates), axis=1), seg


def _mixed_templates(base, schedule, fs):
    return np.array([_mixed(base, f, int(s), fs) for s, f in zip(schedule.starts, schedule.freqs)])


def _filter_at(x: np.ndarray, taps: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Samples ``idx`` of the full convolution ``x * taps``."""
    pad = np.concatenate([np.zeros(taps.size - 1, dtype=x.dtype), x, np.zeros(taps.size, dtype=x.dtype)])
    win = np.lib.stride_tricks.sliding_window_view(pad, taps.size)[idx]
    return win @ taps[::-1]


def _demodulate(seg: np.ndarray, spec: TelegramSpec, schedule: BurstSchedule) -> np.ndarray:
    """Slice aligned, CFO-free burst segments into frame bits."""
    fs = spec.sample_rate
    taps = rrc_taps(spec.sps, spec.span, spec.rolloff)
    m = np.arange(seg.shape[1])
    rot = 1j ** np.arange(spec.symbols_per_burst)
    pilots = PILOT * rot[: PILOT.size]
    idx = np.arange(spec.symbols_per_burst) * spec.sps + spec.span * spec.sps
    bits = []
    for i in range(seg.shape[0]):
        # remove slot mixing; the pilots absorb the remaining phase
        bb = seg[i] * np.exp(-2j * np.pi * schedule.freqs[i] * (schedule.starts[i] + m) / fs)
        y = _filter_at(bb, taps, idx)
        h = np.mean(y[: PILOT.size] * np.conj(pilots))
        soft = np.real(y[PILOT.size:] * np.conj(rot[PILOT.size:]) * np.conj(h))
        bits.append((soft < 0).astype(np.uint8))
    return np.concatenate(bits)


def decode(stream: BasebandSignal, candidate: Candidate, spec: TelegramSpec, *,
           station_id: int = 0, schedule: BurstSchedule | None = None,
           max_cfo: float = DEFAULT_MAX_CFO, topic: str | None = None) -> TelegramReport:
    """Demodulate one detected telegram into a report.

    A CRC mismatch still yields a report (``crc_ok=False``) carrying the
    decoded payload bytes.
    """
    if schedule is None:
        schedule = hop_pattern(spec)
    x = stream.samples
    fs = spec.sample_rate
    d = decimation(spec)
    noise = _noise_power(x, candidate.index, schedule, spec.span * spec.sps)

    # pilot-aided timing, CFO and demodulation
    pilots = _mixed_templates(pilot_template(spec), schedule, fs)
    n1, frac = _integer_refine(x, candidate.index, schedule, pilots, d)
    z, _ = _burst_correlations(x, n1, 0.0, spec, schedule, pilots)
    _, t_cen = _centroids(pilots, fs)
    cfo = slot_cfo_search(z, (schedule.starts + t_cen) / fs, schedule.slots, max_cfo,
                          schedule.length / fs)
    empty = np.zeros((schedule.starts.size, schedule.burst_len), dtype=np.complex128)
    _, seg = _burst_correlations(x, n1, frac / fs, spec, schedule, empty, cfo)
    bits = _demodulate(seg, spec, schedule)
    payload, ok = _bits_to_frame(bits)

    # data-aided timing: unbiased in-burst alignment, then the coherent
    # cross-slot phase fit (ambiguous every 1/slot_spacing, hence the search span)
    ref, _ = modulate_bits(spec, bits, schedule)
    tmpl = np.array([ref.samples[s:s + schedule.burst_len] for s in schedule.starts])
    n2, frac2 = _integer_refine(x, n1, schedule, tmpl, d)
    f_c, t_cen = _centroids(tmpl, fs)
    t_c = (schedule.starts + t_cen) / fs
    energy = np.sum(np.abs(tmpl) ** 2, axis=1)
    z, _ = _burst_correlations(x, n2, 0.0, spec, schedule, tmpl, cfo)
    spacing = np.min(np.diff(np.unique(schedule.freqs))) if len(set(schedule.freqs)) > 1 else 1e5
    delay = _delay_search(z, t_c, f_c, 0.0, frac2 / fs, 0.45 / spacing, float(np.ptp(f_c)))
    for _ in range(3):
        z, _ = _burst_correlations(x, n2, delay, spec, schedule, tmpl, cfo)
        var_phi = np.maximum(noise * energy / (2 * np.abs(z) ** 2), 1e-12)
        theta, d_eps, d_delay, cov = fit_phases(z, t_c, f_c, var_phi, (None, 0.0, 0.0))
        cfo += d_eps
        delay += d_delay

    amp2 = np.abs(z / energy) ** 2 - noise / energy
    power = max(float(np.mean(amp2)), 1e-30)
    rssi = 10 * math.log10(power)
    snr = 10 * math.log10(max(power * spec.sps / noise, 1e-30))
    toa = stream.t0.add_seconds(n2 / fs + delay)
    return TelegramReport(
        station_id=station_id,
        toa=toa,
        rssi_dbm=rssi,
        snr_db=snr,
        payload=payload,
        crc_ok=ok,
        topic=topic or report_topic(station_id),
        toa_sigma=float(math.sqrt(cov[2, 2])),
        cfo_hz=float(cfo),
    )


def decode_stream(stream: BasebandSignal, spec: TelegramSpec, *, station_id: int = 0,
                  pfa: float = DEFAULT_PFA, max_cfo: float = DEFAULT_MAX_CFO) -> list[TelegramReport]:
    """Detect and decode every telegram in ``stream``; reports sorted by ToA."""
    schedule = hop_pattern(spec)
    reports = []
    for cand in detect_telegram(stream, spec, pfa=pfa, schedule=schedule):
        try:
            reports.append(decode(stream, cand, spec, station_id=station_id, schedule=schedule,
                                  max_cfo=max_cfo))
        except DecodeError as exc:
            log.warning("bs%d: candidate at %s not decoded: %s", station_id, cand.toa, exc)
    reports.sort(key=lambda r: r.toa)
    return reports


def predicted_toa_sigma(snr_db: float, spec: TelegramSpec,
                        schedule: BurstSchedule | None = None) -> float:
    """ToA standard deviation of the data-aided phase fit at Es/N0 ``snr_db``.

    Uses the same linear model as :func:`fit_phases` with per-burst phase
    variance ``1 / (2 E_burst / N0)``.
    """
    if schedule is None:
        schedule = hop_pattern(spec)
    fs = spec.sample_rate
    esn0 = 10 ** (snr_db / 10)
    ebn = esn0 * schedule.burst_len / spec.sps
    bits = np.zeros(spec.capacity_bits, dtype=np.uint8)
    ref, _ = modulate_bits(spec, bits, schedule)
    tmpl = np.array([ref.samples[s:s + schedule.burst_len] for s in schedule.starts])
    f_c, t_cen = _centroids(tmpl, fs)
    t_c = (schedule.starts + t_cen) / fs
    a = np.column_stack([np.ones_like(t_c), 2 * np.pi * t_c, -2 * np.pi * f_c])
    cov = np.linalg.inv(a.T @ a * (2 * ebn))
    return float(math.sqrt(cov[2, 2]))
