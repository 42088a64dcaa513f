"""Station-pair synchronization from SoO captures.

The streams are split into ``K`` blocks after a coarse integer alignment.
Per block, the phase of the cross-spectrum ``conj(A) B`` across the
occupied band is fit by a line in frequency: the slope is the residual
fractional delay, the intercept the carrier phase at the block centre.
Linear fits of the block delays and (unwrapped) phases over block time give
the clock offset at mid-capture, the SCO and the CFO. Uncertainties are the
standard errors of those fits, i.e. residual scatter of the block estimates.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import fft as sfft

from .channel import geometric_delay
from .signal import BasebandSignal, Timestamp


class SyncError(RuntimeError):
    pass


class InsufficientOverlapError(SyncError):
    pass


class NoLockError(SyncError):
    """Correlation peak indistinguishable from noise."""


class AmbiguityError(SyncError):
    """CFO too large for unambiguous phase unwrapping between blocks."""


class StaleEstimateError(SyncError):
    pass


@dataclass(frozen=True)
class CcfResult:
    lags: np.ndarray
    magnitude: np.ndarray
    phase: np.ndarray
    peak_lag: float
    peak_phase: float
    peak_magnitude: float


@dataclass(frozen=True)
class SyncParams:
    """Estimator settings for one station pair.

    ``path_delay_diff`` is the SoO geometric delay at the remote station minus
    that at the reference (s). ``report_carrier`` sets the carrier at which
    CFO values are expressed; it defaults to the SoO carrier.
    """

    station_pair: tuple = (0, 1)
    n_blocks: int = 16
    soo_carrier: float = 178.352e6
    report_carrier: float | None = None
    path_delay_diff: float = 0.0
    bandwidth: float = 1.536e6
    max_lag: int = 4096
    lock_factor: float = 5.0

    @property
    def carrier(self) -> float:
        return self.report_carrier if self.report_carrier is not None else self.soo_carrier

    @classmethod
    def for_pair(cls, scenario, ref_id: int, remote_id: int, **kw) -> "SyncParams":
        soo = scenario.soo_emitter
        g_ref = geometric_delay(soo.position, scenario.station(ref_id).position)
        g_rem = geometric_delay(soo.position, scenario.station(remote_id).position)
        return cls(
            station_pair=(ref_id, remote_id),
            n_blocks=scenario.sync.n_blocks,
            soo_carrier=soo.carrier,
            path_delay_diff=g_rem - g_ref,
            bandwidth=scenario.soo_spec().occupied_bandwidth,
            **kw,
        )


@dataclass(frozen=True)
class SyncEstimate:
    """Clock relation of ``remote`` to ``ref``.

    ``tau`` is remote clock minus reference clock at ``t_mid`` (reference
    clock), SoO path delay removed. ``cfo`` and ``sigma_cfo`` are in Hz at
    ``carrier``.
    """

    station_pair: tuple
    tau: float
    cfo: float
    sco_ppm: float
    sigma_tau: float
    sigma_cfo: float
    sigma_sco_ppm: float
    t_mid: Timestamp
    carrier: float

    def at_carrier(self, carrier: float) -> "SyncEstimate":
        k = carrier / self.carrier
        return replace(self, cfo=self.cfo * k, sigma_cfo=self.sigma_cfo * k, carrier=carrier)


@dataclass(frozen=True)
class CorrectedToa:
    toa: Timestamp
    sigma: float


# ------------------------------------------------------------------ CCF
def _parabola(y0: float, y1: float, y2: float) -> float:
    den = y0 - 2.0 * y1 + y2
    if den >= 0:
        return 0.0
    return float(np.clip(0.5 * (y0 - y2) / den, -0.5, 0.5))


def ccf(a: BasebandSignal, b: BasebandSignal, max_lag: int) -> CcfResult:
    """Normalized cross-correlation ``R(l) = sum_n b[n+l] conj(a[n])``.

    Lags are array-index offsets; ``b[n] = a[n - d]`` peaks at ``l = d``.
    The peak is refined by a parabola through the magnitudes and the phase
    is read from the complex CCF interpolated with the same fraction.
    """
    if abs(a.sample_rate - b.sample_rate) > 1e-9 * a.sample_rate:
        raise SyncError("sample rates differ")
    if not (a.t0 < b.t_end and b.t0 < a.t_end):
        raise InsufficientOverlapError("streams do not overlap in time")
    n_min = min(len(a), len(b))
    if max_lag < 1 or max_lag >= n_min / 2:
        raise InsufficientOverlapError(f"max_lag {max_lag} needs streams longer than {2 * max_lag}")
    x, y = a.samples, b.samples
    n = sfft.next_fast_len(x.size + y.size)
    r = sfft.ifft(np.conj(sfft.fft(x, n)) * sfft.fft(y, n))
    lags = np.arange(-max_lag, max_lag + 1)
    vals = r[lags % n]
    norm = math.sqrt(float(np.vdot(x, x).real) * float(np.vdot(y, y).real))
    vals = vals / norm if norm > 0 else vals
    mag = np.abs(vals)
    k = int(np.argmax(mag))
    p = 0.0
    peak = vals[k]
    if 0 < k < mag.size - 1:
        p = _parabola(mag[k - 1], mag[k], mag[k + 1])
        c0, c1, c2 = vals[k - 1:k + 2]
        peak = c1 + 0.5 * p * (c2 - c0) + 0.5 * p * p * (c2 - 2 * c1 + c0)
    return CcfResult(lags, mag, np.angle(vals), float(lags[k] + p), float(np.angle(peak)),
                     float(np.abs(peak)))


# ------------------------------------------------------------------ estimation
def _linfit(x: np.ndarray, y: np.ndarray, w: np.ndarray | None = None):
    """Weighted straight line; returns (intercept, slope, se_intercept, se_slope) at mean x."""
    if w is None:
        w = np.ones_like(x)
    xm = np.sum(w * x) / np.sum(w)
    xc = x - xm
    sxx = np.sum(w * xc * xc)
    slope = np.sum(w * xc * y) / sxx
    icept = np.sum(w * y) / np.sum(w)
    res = y - icept - slope * xc
    dof = max(x.size - 2, 1)
    s2 = np.sum(w * res * res) / dof
    return icept, slope, math.sqrt(s2 / np.sum(w)), math.sqrt(s2 / sxx), xm


def block_phase_fit(a_blk: np.ndarray, b_blk: np.ndarray, band: float):
    """Fractional delay (samples) and intercept phase of one block pair.

    ``band`` is the occupied half-bandwidth in cycles per sample; bins
    outside it are ignored.
    """
    n = a_blk.size
    x = np.conj(sfft.fft(a_blk)) * sfft.fft(b_blk)
    f = sfft.fftfreq(n)
    sel = np.abs(f) <= band
    x, f = x[sel], f[sel]
    ref = np.sum(x)
    ph = np.angle(x * np.conj(ref))
    # |X| weights keep the low-SNR bins at the band edges from wrapping into the fit
    icept, slope, _, _, fm = _linfit(2 * np.pi * f, ph, np.abs(x))
    phase0 = float(np.angle(ref)) + icept - slope * fm
    return -slope, phase0


def estimate_sync(ref_stream: BasebandSignal, remote_stream: BasebandSignal,
                  params: SyncParams = SyncParams()) -> SyncEstimate:
    """Time offset, CFO and SCO of ``remote_stream`` against ``ref_stream``."""
    fs = ref_stream.sample_rate
    if abs(remote_stream.sample_rate - fs) > 1e-9 * fs:
        raise SyncError("streams must share the sample rate")
    if params.station_pair[0] == params.station_pair[1]:
        raise SyncError("station pair ids must differ")
    k_blocks = params.n_blocks
    if k_blocks < 3:
        raise SyncError("need at least 3 blocks")
    a, b = ref_stream.samples, remote_stream.samples
    max_lag = min(params.max_lag, min(a.size, b.size) // 2 - 1)
    coarse = ccf(ref_stream, remote_stream, max_lag)
    n_overlap = min(a.size, b.size)
    if coarse.peak_magnitude < params.lock_factor / math.sqrt(n_overlap):
        raise NoLockError(
            f"peak {coarse.peak_magnitude:.2e} below lock threshold "
            f"{params.lock_factor / math.sqrt(n_overlap):.2e}"
        )
    lag0 = int(round(coarse.peak_lag))
    i0 = max(0, -lag0)
    usable = min(a.size - i0, b.size - i0 - lag0)
    nb = usable // k_blocks
    if nb < 64:
        raise InsufficientOverlapError("overlap too short for the block count")
    band = 0.5 * params.bandwidth / fs
    delays = np.empty(k_blocks)
    phases = np.empty(k_blocks)
    halves = np.empty(k_blocks, dtype=np.complex128)
    for k in range(k_blocks):
        s = i0 + k * nb
        ab = a[s:s + nb]
        bb = b[s + lag0:s + lag0 + nb]
        d, ph = block_phase_fit(ab, bb, band)
        delays[k] = lag0 + d
        phases[k] = ph
        h = nb // 2
        halves[k] = np.vdot(ab[h:], bb[h:]) * np.conj(np.vdot(ab[:h], bb[:h]))
    dt_block = nb / fs
    # half-block phase advance; unambiguous to twice the block-rate limit
    cfo_coarse = float(np.angle(np.sum(halves))) / (2 * np.pi * (nb // 2) / fs)
    if abs(cfo_coarse) * dt_block > 0.5:
        raise AmbiguityError(
            f"CFO ~{cfo_coarse:.2f} Hz exceeds {0.5 / dt_block:.2f} Hz for {dt_block * 1e3:.2f} ms "
            "blocks; use more (shorter) blocks"
        )
    t_k = (i0 + (np.arange(k_blocks) + 0.5) * nb) / fs
    d_sec = delays / fs
    d_mid, slope, se_d, se_slope, t_mean = _linfit(t_k, d_sec)
    unwrapped = np.unwrap(phases - 2 * np.pi * cfo_coarse * t_k) + 2 * np.pi * cfo_coarse * t_k
    _, ph_slope, _, se_ph, _ = _linfit(t_k, unwrapped)
    scale = params.carrier / params.soo_carrier
    cfo = ph_slope / (2 * np.pi) * scale
    sigma_cfo = se_ph / (2 * np.pi) * abs(scale)
    tau = d_mid + (remote_stream.t0 - ref_stream.t0) - params.path_delay_diff
    t_mid = ref_stream.t0.add_seconds(t_mean)
    return SyncEstimate(
        station_pair=tuple(params.station_pair),
        tau=float(tau),
        cfo=float(cfo),
        sco_ppm=float(slope * 1e6),
        sigma_tau=float(se_d),
        sigma_cfo=float(sigma_cfo),
        sigma_sco_ppm=float(se_slope * 1e6),
        t_mid=t_mid,
        carrier=params.carrier,
    )


def apply_correction(toa: Timestamp, est: SyncEstimate, *, toa_sigma: float = 0.0,
                     validity: float = 60.0) -> CorrectedToa:
    """Map a remote-clock ToA onto the reference clock.

    ``corrected = toa - tau - sco * (toa - t_mid)``; the uncertainty adds the
    ToA, offset and drift terms in quadrature.
    """
    age = toa - est.t_mid
    if abs(age) > validity:
        raise StaleEstimateError(f"estimate is {age:.1f} s from the ToA (window {validity} s)")
    sco = est.sco_ppm * 1e-6
    corrected = toa.add_seconds(-est.tau - sco * age)
    sigma = math.sqrt(toa_sigma**2 + est.sigma_tau**2 + (est.sigma_sco_ppm * 1e-6 * age) ** 2)
    return CorrectedToa(corrected, sigma)


# ------------------------------------------------------------------ bounds
def effective_snr(snr_linear: float) -> float:
    """Per-bin SNR of a product of two independently noisy captures."""
    return snr_linear**2 / (1.0 + 2.0 * snr_linear)


def crlb_tau(snr_linear: float, bandwidth_rms: float, time_bandwidth: float) -> float:
    """Delay bound ``1 / (2 pi B_rms sqrt(2 TB snr))`` for a known waveform (s)."""
    if min(snr_linear, bandwidth_rms, time_bandwidth) <= 0:
        raise ValueError("arguments must be positive")
    return 1.0 / (2 * math.pi * bandwidth_rms * math.sqrt(2.0 * time_bandwidth * snr_linear))


def crlb_cfo(snr_linear: float, duration: float, n_samples: float) -> float:
    """Frequency bound ``sqrt(6 / ((2 pi)^2 snr N T^2))`` (Hz)."""
    if min(snr_linear, duration, n_samples) <= 0:
        raise ValueError("arguments must be positive")
    return math.sqrt(6.0 / ((2 * math.pi) ** 2 * snr_linear * n_samples * duration**2))


def scenario_crlb(es_n0_db: float, f_s: float, bandwidth: float, duration: float) -> tuple:
    """(sigma_tau, sigma_cfo) bounds for two captures of one flat-spectrum SoO.

    ``es_n0_db`` is signal over noise power in the ``f_s`` capture band;
    the in-band SNR is higher by ``f_s / bandwidth``.
    """
    rho = 10 ** (es_n0_db / 10) * f_s / bandwidth
    snr = effective_snr(rho)
    tb = duration * bandwidth
    return crlb_tau(snr, bandwidth / math.sqrt(12.0), tb), crlb_cfo(snr, duration, tb)


# ------------------------------------------------------------------ series
def sliding_sigma(t: np.ndarray, values: np.ndarray, window: int = 20) -> np.ndarray:
    """Standard deviation of each trailing ``window`` of values after removing a line.

    Entries before a full window is available are NaN.
    """
    if window < 3:
        raise ValueError("window must hold at least 3 values")
    t = np.asarray(t, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    out = np.full(v.size, np.nan)
    for i in range(window - 1, v.size):
        tt = t[i - window + 1:i + 1]
        vv = v[i - window + 1:i + 1]
        tc = tt - tt.mean()
        coef = np.polyfit(tc, vv, 1)
        res = vv - np.polyval(coef, tc)
        out[i] = math.sqrt(np.sum(res**2) / (window - 2))
    return out


def _fmt(x: float) -> str:
    return "" if not math.isfinite(x) else repr(float(x))


def write_sync_csv(estimates: list[SyncEstimate], out_dir, window: int = 20) -> tuple:
    """Write ``sync_tau.csv`` and ``sync_cfo.csv``; returns the two paths.

    ``sigma_*_s``/``sigma_cfo_hz`` hold the sliding scatter over ``window``
    estimates per pair (linear trend removed); ``*_pred`` hold each
    estimate's own standard error.
    """
    out = Path(out_dir)
    by_pair: dict = {}
    for e in estimates:
        by_pair.setdefault(tuple(e.station_pair), []).append(e)
    rows_tau, rows_cfo = [], []
    for pair, ests in sorted(by_pair.items()):
        ests = sorted(ests, key=lambda e: e.t_mid)
        t = np.array([(e.t_mid - ests[0].t_mid) for e in ests])
        s_tau = sliding_sigma(t, [e.tau for e in ests], window)
        s_cfo = sliding_sigma(t, [e.cfo for e in ests], window)
        label = f"{pair[0]}-{pair[1]}"
        for e, st, sc in zip(ests, s_tau, s_cfo):
            rows_tau.append([e.t_mid.ns, label, _fmt(e.tau), _fmt(st), _fmt(e.sigma_tau)])
            rows_cfo.append([e.t_mid.ns, label, _fmt(e.cfo), _fmt(sc), _fmt(e.sigma_cfo)])
    p_tau = out / "sync_tau.csv"
    p_cfo = out / "sync_cfo.csv"
    with open(p_tau, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_mid_ns", "pair", "tau_s", "sigma_tau_s", "sigma_tau_pred_s"])
        w.writerows(rows_tau)
    with open(p_cfo, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_mid_ns", "pair", "cfo_hz", "sigma_cfo_hz", "sigma_cfo_pred_hz"])
        w.writerows(rows_cfo)
    return p_tau, p_cfo
