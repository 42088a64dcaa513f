"""End-to-end scenario runner: stations, transport, aggregator.

Per epoch, each station captures a window of both channels around the
telegram's arrival, digitizes it into its ring store and decodes channel 0
locally. The aggregator then pulls SoO (and LPWAN) IQ from every station at
that station's reported ToA, estimates the clock relation of each station
to the reference, corrects the ToAs and solves for the emitter position.

Time is virtual: captures are produced in schedule order without waiting.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import CH_LPWAN, CH_SOO, channel_levels, propagate, stream_rng
from .decoder import TelegramReport, decode_stream
from .frontend import FrontendChain
from .scenario import ScenarioConfig
from .signal import Timestamp
from .sync import SyncError, SyncParams, apply_correction, estimate_sync, sliding_sigma, write_sync_csv
from .tdoa import TdoaError, solve_position, tdoa_from_reports, write_fixes_csv
from .transport import (
    FetchError,
    HttpEndpoint,
    IqRequest,
    LocalEndpoint,
    RingStore,
    StationServer,
    fetch_iq,
)
from .waveforms import gen_soo, gen_telegram, schedule_emitter

log = logging.getLogger(__name__)

MODES = ("inproc", "sockets")

#: Margin around a capture window covered by the generated SoO segment (s).
SOO_MARGIN = 5e-3


@dataclass
class ExperimentResult:
    name: str
    config_hash: str
    files: dict
    summary: dict
    out_dir: Path | None = None

    @property
    def ok(self) -> bool:
        return bool(self.summary.get("complete", False))


@dataclass
class _Counters:
    errors: int = 0
    detail: dict = field(default_factory=dict)

    def add(self, kind: str, message: str = "") -> None:
        self.errors += 1
        self.detail[kind] = self.detail.get(kind, 0) + 1
        if message:
            log.warning("%s: %s", kind, message)


def payload_for(cfg: ScenarioConfig, k: int) -> bytes:
    """Telegram payload of epoch ``k``: scenario name and a running counter."""
    return f"{cfg.name}#{k:05d}".encode()


def epoch_times(cfg: ScenarioConfig) -> list[Timestamp]:
    return [cfg.t_start.add_seconds(t) for t in schedule_emitter(cfg.schedule.interval,
                                                                cfg.schedule.total)]


def capture_start(cfg: ScenarioConfig, station_id: int, t_emit: Timestamp) -> Timestamp:
    """Local start of the station's capture window for a telegram sent at ``t_emit``."""
    st = cfg.station(station_id)
    local = st.local_time(t_emit, cfg.t_start)
    return Timestamp(local.add_seconds(-cfg.transport.pre_trigger_s).floor_ns())


class Station:
    """One base station: channel capture, frontend, ring store, server and decoder."""

    def __init__(self, cfg: ScenarioConfig, station_id: int):
        self.cfg = cfg
        self.id = station_id
        fe = cfg.frontend
        self.store = RingStore(cfg.transport.capacity_s)
        self.chain = FrontendChain(cfg.f_res, fe.fft_len, 16, fe.farrow_taps, fe.farrow_order)
        self.server = StationServer(self.store, station_id, cfg.f_res, n_subbands=fe.n_subbands,
                                    fft_len=fe.fft_len, compress=fe.compress)

    def capture(self, k: int, telegram, soo, *, digitize: bool = True) -> list[TelegramReport]:
        """Receive one epoch; store both channels and return decoded reports.

        With ``digitize=False`` only the decoder sees the capture.
        """
        cfg = self.cfg
        t0 = capture_start(cfg, self.id, telegram.t0)
        n = int(round(cfg.transport.capture_s * cfg.f_s))
        lp = propagate(telegram, cfg, self.id, CH_LPWAN, t0=t0, n_samples=n,
                       rng=stream_rng(cfg.seed, "noise", self.id, CH_LPWAN, k))
        if digitize:
            for blk in self.chain.digitize(lp, CH_LPWAN):
                self.store.store_block(CH_LPWAN, blk)
        if soo is not None and digitize:
            so = propagate(soo, cfg, self.id, CH_SOO, t0=t0, n_samples=n,
                           rng=stream_rng(cfg.seed, "noise", self.id, CH_SOO, k))
            for blk in self.chain.digitize(so, CH_SOO):
                self.store.store_block(CH_SOO, blk)
        spec = cfg.telegram_spec(payload_for(cfg, k))
        return decode_stream(lp, spec, station_id=self.id)


def _endpoints(stations, mode, port_base=None):
    if mode == "inproc":
        return {sid: LocalEndpoint(st.server) for sid, st in stations.items()}
    out = {}
    for i, (sid, st) in enumerate(stations.items()):
        port = 0 if port_base is None else port_base + i
        out[sid] = HttpEndpoint(st.server.serve(port=port))
    return out


def _fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    return repr(x) if math.isfinite(x) else ""


def _finite_mean(values) -> float | None:
    v = np.asarray([x for x in values if x is not None and math.isfinite(x)], dtype=float)
    return float(v.mean()) if v.size else None


def write_per_table(path, cfg: ScenarioConfig, sent: int, received: dict, rssi: dict) -> list:
    rows = []
    for sid in cfg.station_ids:
        got = received.get(sid, 0)
        st = cfg.station(sid)
        expected = channel_levels(cfg, st, CH_LPWAN).signal_dbm
        rows.append({
            "station_id": sid,
            "sent": sent,
            "received": got,
            "packets_received_pct": 100.0 * got / sent if sent else float("nan"),
            "per_pct": 100.0 * (sent - got) / sent if sent else float("nan"),
            "mean_rssi_dbm": _finite_mean(rssi.get(sid, [])),
            "model_rssi_dbm": expected,
        })
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(rows[0].keys()))
        for r in rows:
            w.writerow([r["station_id"], r["sent"], r["received"], _fmt(r["packets_received_pct"]),
                        _fmt(r["per_pct"]), _fmt(r["mean_rssi_dbm"]), _fmt(r["model_rssi_dbm"])])
    return rows


def write_summary(path, summary: dict) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _clean(obj):
    """Replace non-finite floats by None so the JSON stays strict."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def run_scenario(cfg: ScenarioConfig, mode: str = "inproc", out_dir=None, *,
                 time_scale: float = 0.0, lpwan_only: bool = False,
                 name: str = "run", port_base: int | None = None) -> ExperimentResult:
    """Run the schedule end to end and write all outputs to ``out_dir``.

    ``time_scale`` > 0 (sockets mode) sleeps ``interval * time_scale`` real
    seconds between epochs. ``lpwan_only`` skips SoO, transport, sync and
    TDoA (the per-station decode path only). In sockets mode station ``i``
    listens on ``port_base + i`` (ephemeral ports when None).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    cfg.validate()
    out = Path(out_dir or "out")
    out.mkdir(parents=True, exist_ok=True)
    ids = cfg.station_ids
    stations = {sid: Station(cfg, sid) for sid in ids}
    counters = _Counters()
    epochs = epoch_times(cfg)
    ref_id = cfg.sync.ref_id
    do_sync = cfg.sync.enabled and not lpwan_only
    do_tdoa = cfg.tdoa.enabled and do_sync and len(ids) >= cfg.tdoa.dims + 1
    positions = {s.id: tuple(s.position) for s in cfg.stations}
    truth = np.asarray(cfg.lpwan_emitter.position, dtype=float)

    received = {sid: 0 for sid in ids}
    rssi: dict = {sid: [] for sid in ids}
    estimates = []
    fixes = []
    reports_path = out / "reports.jsonl"
    endpoints = {}
    pool = ThreadPoolExecutor(max_workers=len(ids)) if mode == "sockets" else None
    pairs = {sid: SyncParams.for_pair(cfg, ref_id, sid) for sid in ids if sid != ref_id} if do_sync else {}
    dur_ms = int(round(cfg.sync.duration * 1000))
    try:
        if not lpwan_only:
            endpoints = _endpoints(stations, mode, port_base)
        with open(reports_path, "w") as rep_fh:
            for k, t_e in enumerate(epochs):
                if k and time_scale > 0 and mode == "sockets":
                    time.sleep(cfg.schedule.interval * time_scale)
                spec = cfg.telegram_spec(payload_for(cfg, k))
                telegram, _ = gen_telegram(spec, t_e)
                soo = None
                if not lpwan_only:
                    soo_t0 = t_e.add_seconds(-cfg.transport.pre_trigger_s - SOO_MARGIN)
                    soo = gen_soo(cfg.soo_spec(int(stream_rng(cfg.seed, "soo", k).integers(2**31))),
                                  cfg.transport.capture_s + 2 * SOO_MARGIN, soo_t0)
                epoch_reports = {}
                for sid in ids:
                    reps = stations[sid].capture(k, telegram, soo, digitize=not lpwan_only)
                    mine = [r for r in reps if r.crc_ok and r.payload == spec.payload]
                    for r in reps:
                        rep_fh.write(r.to_json() + "\n")
                    if mine:
                        received[sid] += 1
                        rssi[sid].append(mine[0].rssi_dbm)
                        epoch_reports[sid] = mine[0]
                    else:
                        counters.add("decode", f"epoch {k}: station {sid} lost the telegram")
                if not do_sync:
                    continue
                ests = _aggregate_sync(cfg, k, epoch_reports, endpoints, pairs, dur_ms, pool,
                                       counters)
                estimates.extend(ests.values())
                if do_tdoa:
                    fixes.append((k, _solve(cfg, k, epoch_reports, ests, positions, counters)))
    finally:
        if pool is not None:
            pool.shutdown()
        if mode == "sockets":
            for st in stations.values():
                st.server.shutdown()

    files = {"reports": str(reports_path)}
    per_rows = write_per_table(out / "per_table.csv", cfg, len(epochs), received, rssi)
    files["per_table"] = str(out / "per_table.csv")
    summary = {
        "experiment": name,
        "scenario": cfg.name,
        "config_hash": cfg.config_hash(),
        "telegrams_sent": len(epochs),
        "per_pct": {str(r["station_id"]): r["per_pct"] for r in per_rows},
        "mean_rssi_dbm": {str(r["station_id"]): r["mean_rssi_dbm"] for r in per_rows},
    }
    required = ["per_pct", "mean_rssi_dbm"]
    if do_sync:
        p_tau, p_cfo = write_sync_csv(estimates, out, cfg.sync.sigma_window)
        files["sync_tau"], files["sync_cfo"] = str(p_tau), str(p_cfo)
        summary.update(_sync_summary(estimates, cfg.sync.sigma_window))
        required += ["sigma_tau_s", "sigma_cfo_hz"]
    if do_tdoa:
        write_fixes_csv(fixes, out / "fixes.csv")
        files["fixes"] = str(out / "fixes.csv")
        errs = [np.linalg.norm(f.position[:2] - truth[:2]) for _, f in fixes if f is not None]
        summary["position_rmse_m"] = float(np.sqrt(np.mean(np.square(errs)))) if errs else None
        summary["fixes"] = len(errs)
        required.append("position_rmse_m")
    summary["errors"] = counters.errors
    summary["error_detail"] = dict(sorted(counters.detail.items()))
    summary["sigma_window"] = cfg.sync.sigma_window
    summary["complete"] = all(_present(summary.get(key)) for key in required)
    summary = _clean(summary)
    write_summary(out / "summary.json", summary)
    files["summary"] = str(out / "summary.json")
    return ExperimentResult(name, cfg.config_hash(), files, summary, out)


def _present(value) -> bool:
    if value is None:
        return False
    if isinstance(value, dict):
        return bool(value) and all(_present(v) for v in value.values())
    if isinstance(value, float):
        return math.isfinite(value)
    return True


def _fetch(endpoint, t0_ns, dur_ms, channel, f_res):
    return fetch_iq(endpoint, IqRequest(t0_ns, dur_ms, channel), f_res=f_res)


def _aggregate_sync(cfg, k, reports, endpoints, pairs, dur_ms, pool, counters) -> dict:
    """Fetch SoO/LPWAN IQ at each station's ToA and estimate every pair."""
    ref_id = cfg.sync.ref_id
    if ref_id not in reports:
        counters.add("sync", f"epoch {k}: reference station has no report")
        return {}
    lead = 0.01
    jobs = {}
    for sid, rep in reports.items():
        t0 = rep.toa.add_seconds(-lead).floor_ns()
        for ch, dur in ((CH_SOO, dur_ms), (CH_LPWAN, dur_ms)):
            args = (endpoints[sid], t0, dur, ch, cfg.f_res)
            jobs[(sid, ch)] = pool.submit(_fetch, *args) if pool else args
    streams = {}
    for key, job in jobs.items():
        try:
            streams[key] = job.result() if pool else _fetch(*job)
        except FetchError as exc:
            counters.add("fetch", f"epoch {k}: station {key[0]} ch{key[1]}: {exc}")
    ests = {}
    ref = streams.get((ref_id, CH_SOO))
    for sid, params in pairs.items():
        rem = streams.get((sid, CH_SOO))
        if ref is None or rem is None:
            if sid in reports:
                counters.add("sync", f"epoch {k}: missing SoO stream for pair ({ref_id}, {sid})")
            continue
        try:
            ests[sid] = estimate_sync(ref, rem, params)
        except SyncError as exc:
            counters.add("sync", f"epoch {k}: pair ({ref_id}, {sid}): {exc}")
    return ests


def _solve(cfg, k, reports, ests, positions, counters):
    ref_id = cfg.sync.ref_id
    try:
        meas = tdoa_from_reports(list(reports.values()), {(ref_id, s): e for s, e in ests.items()},
                                 ref_id, validity=cfg.sync.validity_s)
        if len(meas) < cfg.tdoa.dims:
            counters.add("tdoa", f"epoch {k}: {len(meas)} measurements")
            return None
        fix = solve_position(meas, positions)
        if not fix.converged:
            counters.add("tdoa", f"epoch {k}: solver did not converge")
        return fix
    except (TdoaError, SyncError) as exc:
        counters.add("tdoa", f"epoch {k}: {exc}")
        return None


def _sync_summary(estimates, window) -> dict:
    by_pair: dict = {}
    for e in estimates:
        by_pair.setdefault(tuple(e.station_pair), []).append(e)
    sig_tau, sig_cfo, pred_tau, pred_cfo = {}, {}, {}, {}
    for pair, ests in sorted(by_pair.items()):
        ests.sort(key=lambda e: e.t_mid)
        t = np.array([e.t_mid - ests[0].t_mid for e in ests])
        label = f"{pair[0]}-{pair[1]}"
        sig_tau[label] = _finite_mean(sliding_sigma(t, [e.tau for e in ests], window))
        sig_cfo[label] = _finite_mean(sliding_sigma(t, [e.cfo for e in ests], window))
        pred_tau[label] = _finite_mean([e.sigma_tau for e in ests])
        pred_cfo[label] = _finite_mean([e.sigma_cfo for e in ests])
    return {
        "sigma_tau_s": sig_tau,
        "sigma_cfo_hz": sig_cfo,
        "sigma_tau_pred_s": pred_tau,
        "sigma_cfo_pred_hz": pred_cfo,
        "sync_estimates": len(estimates),
    }


def corrected_toas(reports: dict, ests: dict, ref_id: int, validity: float = 60.0) -> dict:
    """Reference-clock ToAs of one telegram, keyed by station."""
    out = {ref_id: reports[ref_id].toa}
    for sid, rep in reports.items():
        if sid != ref_id and sid in ests:
            out[sid] = apply_correction(rep.toa, ests[sid], validity=validity).toa
    return out
