"""Named experiments: PER table, synchronization scatter and TDoA Monte Carlo.

Every experiment takes a scenario (the bundled one by default) plus a flat
override mapping. Keys starting with ``experiment.`` tune the harness
itself; every other key is a dotted path into the scenario document.
"""

from __future__ import annotations

import csv
import logging
import math
from pathlib import Path

import numpy as np

from .channel import CH_SOO, propagate, stream_rng, tau_truth
from .frontend import farrow_resample
from .pipeline import ExperimentResult, _clean, _Counters, _present, capture_start, run_scenario, write_summary
from .scenario import ScenarioConfig, apply_overrides, bundled_scenario, from_dict
from .signal import Timestamp
from .sync import SyncError, SyncParams, estimate_sync, scenario_crlb, sliding_sigma, write_sync_csv
from .tdoa import TdoaError, TdoaMeasurement, forward_tdoa, solve_position, write_fixes_csv
from .waveforms import gen_soo

log = logging.getLogger(__name__)

#: Harness parameters and their defaults, per experiment.
DEFAULTS = {
    "per-table": {"total": 9 * 3600.0},
    "sync-sigma": {"trials": 200},
    "tdoa-mc": {"trials": 500, "sigma_tdoa": 200e-12},
}
EXPERIMENTS = tuple(DEFAULTS)


class UnknownExperimentError(KeyError):
    pass


def split_overrides(name: str, overrides: dict | None) -> tuple[dict, dict]:
    """Separate ``experiment.*`` keys from scenario keys and fill defaults."""
    params = dict(DEFAULTS[name])
    scenario = {}
    for key, value in (overrides or {}).items():
        if key.startswith("experiment."):
            sub = key.split(".", 1)[1]
            if sub not in params:
                raise KeyError(f"{key}: unknown parameter for experiment {name!r}")
            params[sub] = value
        else:
            scenario[key] = value
    return params, scenario


def run_experiment(name: str, overrides: dict | None = None, *, config: ScenarioConfig | None = None,
                   out_dir=None) -> ExperimentResult:
    if name not in DEFAULTS:
        raise UnknownExperimentError(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}")
    params, scen = split_overrides(name, overrides)
    base = config or bundled_scenario()
    if name == "per-table":
        scen.setdefault("schedule.total", float(params["total"]))
    doc = apply_overrides(base.to_dict(), scen)
    cfg = from_dict(doc)
    out = Path(out_dir or f"out/{name}")
    out.mkdir(parents=True, exist_ok=True)
    if name == "per-table":
        return run_scenario(cfg, "inproc", out, lpwan_only=True, name=name)
    if name == "sync-sigma":
        return _sync_sigma(cfg, int(params["trials"]), out)
    return _tdoa_mc(cfg, int(params["trials"]), float(params["sigma_tdoa"]), out)


def sync_trial(cfg: ScenarioConfig, k: int, t_e) -> dict:
    """SoO captures of every station around ``t_e``, resampled to ``f_res``."""
    fs = cfg.f_s
    n = int(round(cfg.sync.duration * fs))
    margin = 5e-3
    soo = gen_soo(cfg.soo_spec(int(stream_rng(cfg.seed, "soo", k).integers(2**31))),
                  cfg.sync.duration + 2 * margin, t_e.add_seconds(-margin))
    fe = cfg.frontend
    out = {}
    for sid in cfg.station_ids:
        t0 = capture_start(cfg, sid, t_e).add_seconds(cfg.transport.pre_trigger_s).floor_ns()
        x = propagate(soo, cfg, sid, CH_SOO, t0=Timestamp(t0), n_samples=n,
                      rng=stream_rng(cfg.seed, "noise", sid, CH_SOO, k))
        out[sid] = farrow_resample(x, cfg.f_res, taps=fe.farrow_taps, order=fe.farrow_order)
    return out


def _sync_sigma(cfg: ScenarioConfig, trials: int, out: Path) -> ExperimentResult:
    ref_id = cfg.sync.ref_id
    pairs = {sid: SyncParams.for_pair(cfg, ref_id, sid) for sid in cfg.station_ids if sid != ref_id}
    counters = _Counters()
    estimates = []
    err_tau: dict = {sid: [] for sid in pairs}
    err_cfo: dict = {sid: [] for sid in pairs}
    ref_cfg = cfg.station(ref_id)
    for k in range(trials):
        t_e = cfg.t_start.add_seconds(k * cfg.schedule.interval)
        caps = sync_trial(cfg, k, t_e)
        for sid, params in pairs.items():
            try:
                e = estimate_sync(caps[ref_id], caps[sid], params)
            except SyncError as exc:
                counters.add("sync", f"trial {k}: pair ({ref_id}, {sid}): {exc}")
                continue
            estimates.append(e)
            err_tau[sid].append(e.tau - tau_truth(cfg, ref_id, sid, e.t_mid))
            err_cfo[sid].append(e.cfo - (cfg.station(sid).cfo - ref_cfg.cfo))
    bound_tau, bound_cfo = scenario_crlb(cfg.es_n0_db, cfg.f_s, cfg.soo_spec().occupied_bandwidth,
                                         cfg.sync.duration)
    p_tau, p_cfo = write_sync_csv(estimates, out, cfg.sync.sigma_window)
    window = cfg.sync.sigma_window
    summary = {
        "experiment": "sync-sigma",
        "scenario": cfg.name,
        "config_hash": cfg.config_hash(),
        "trials": trials,
        "sigma_window": window,
        "crlb_tau_s": bound_tau,
        "crlb_cfo_hz": bound_cfo,
        "sigma_tau_s": {},
        "sigma_cfo_hz": {},
        "tau_error_mean_s": {},
        "tau_error_std_s": {},
        "cfo_error_mean_hz": {},
        "cfo_error_std_hz": {},
    }
    for sid in pairs:
        label = f"{ref_id}-{sid}"
        mine = sorted((e for e in estimates if e.station_pair[1] == sid), key=lambda e: e.t_mid)
        t = np.array([e.t_mid - mine[0].t_mid for e in mine]) if mine else np.zeros(0)
        s_tau = sliding_sigma(t, [e.tau for e in mine], window)
        s_cfo = sliding_sigma(t, [e.cfo for e in mine], window)
        summary["sigma_tau_s"][label] = _nanmean(s_tau)
        summary["sigma_cfo_hz"][label] = _nanmean(s_cfo)
        summary["tau_error_mean_s"][label] = _mean(err_tau[sid])
        summary["tau_error_std_s"][label] = _std(err_tau[sid])
        summary["cfo_error_mean_hz"][label] = _mean(err_cfo[sid])
        summary["cfo_error_std_hz"][label] = _std(err_cfo[sid])
    summary["errors"] = counters.errors
    summary["error_detail"] = dict(sorted(counters.detail.items()))
    summary["complete"] = all(_present(summary[k]) for k in ("sigma_tau_s", "sigma_cfo_hz"))
    summary = _clean(summary)
    write_summary(out / "summary.json", summary)
    files = {"sync_tau": str(p_tau), "sync_cfo": str(p_cfo), "summary": str(out / "summary.json")}
    return ExperimentResult("sync-sigma", cfg.config_hash(), files, summary, out)


def _tdoa_mc(cfg: ScenarioConfig, trials: int, sigma: float, out: Path) -> ExperimentResult:
    ref_id = cfg.sync.ref_id
    positions = {s.id: tuple(s.position) for s in cfg.stations}
    others = [sid for sid in cfg.station_ids if sid != ref_id]
    truth = np.asarray(cfg.lpwan_emitter.position, dtype=np.float64)[:cfg.tdoa.dims]
    clean = forward_tdoa(truth, positions, ref_id, others)
    # the solver needs positive weights; they cancel when all are equal
    weight = sigma if sigma > 0 else 1e-12
    nominal = [TdoaMeasurement((ref_id, s), dt, weight) for s, dt in zip(others, clean)]
    predicted = math.sqrt(np.trace(solve_position(nominal, positions, truth).covariance)) * sigma / weight
    rng = stream_rng(cfg.seed, "tdoa-mc")
    counters = _Counters()
    rows = []
    errors = []
    for k in range(trials):
        dt = clean + sigma * rng.standard_normal(clean.size)
        meas = [TdoaMeasurement((ref_id, s), d, weight) for s, d in zip(others, dt)]
        try:
            fix = solve_position(meas, positions)
        except TdoaError as exc:
            counters.add("tdoa", f"trial {k}: {exc}")
            rows.append((k, None))
            continue
        if not fix.converged:
            counters.add("tdoa", f"trial {k}: solver did not converge")
        rows.append((k, fix))
        errors.append(float(np.linalg.norm(fix.position - truth)))
    write_fixes_csv(rows, out / "fixes.csv")
    with open(out / "tdoa_mc.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial", "error_m"])
        for (k, fix) in rows:
            if fix is not None:
                w.writerow([k, repr(float(np.linalg.norm(fix.position - truth)))])
    rmse = float(np.sqrt(np.mean(np.square(errors)))) if errors else None
    summary = _clean({
        "experiment": "tdoa-mc",
        "scenario": cfg.name,
        "config_hash": cfg.config_hash(),
        "trials": trials,
        "sigma_tdoa_s": sigma,
        "position_rmse_m": rmse,
        "predicted_rmse_m": predicted,
        "errors": counters.errors,
        "error_detail": dict(sorted(counters.detail.items())),
        "complete": rmse is not None,
    })
    write_summary(out / "summary.json", summary)
    files = {"fixes": str(out / "fixes.csv"), "tdoa_mc": str(out / "tdoa_mc.csv"),
             "summary": str(out / "summary.json")}
    return ExperimentResult("tdoa-mc", cfg.config_hash(), files, summary, out)


def _nanmean(x) -> float | None:
    x = np.asarray(x, dtype=np.float64)
    x = x[np.isfinite(x)]
    return float(x.mean()) if x.size else None


def _mean(x) -> float | None:
    return float(np.mean(x)) if len(x) else None


def _std(x) -> float | None:
    return float(np.std(x, ddof=1)) if len(x) > 1 else None


__all__ = ["DEFAULTS", "EXPERIMENTS", "UnknownExperimentError", "run_experiment", "split_overrides",
           "sync_trial"]
