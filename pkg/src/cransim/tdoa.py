"""Hyperbolic multilateration from synchronized ToA differences."""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import C
from .sync import SyncEstimate, apply_correction

log = logging.getLogger(__name__)


class TdoaError(RuntimeError):
    pass


class MissingSyncError(TdoaError):
    pass


class DegenerateGeometryError(TdoaError):
    """Station geometry (or normal equations) cannot fix a unique position."""


@dataclass(frozen=True)
class TdoaMeasurement:
    """``delta_t`` = ToA at ``pair[1]`` minus ToA at ``pair[0]`` (reference), s."""

    pair: tuple
    delta_t: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not math.isfinite(self.delta_t):
            raise ValueError("delta_t must be finite")


@dataclass
class PositionFix:
    position: np.ndarray
    covariance: np.ndarray
    residual_rms: float
    n_measurements: int
    converged: bool
    iterations: int = 0
    cost_history: list = field(default_factory=list, repr=False)
    #: geometric dilution of precision: position error (m) per metre of range-difference error
    gdop: float = float("nan")


def payload_key(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()[:16]


def forward_tdoa(position, station_positions: dict, ref_id: int, ids) -> np.ndarray:
    """Noise-free ToA differences for an emitter at ``position``."""
    x = np.asarray(position, dtype=np.float64)
    r_ref = np.linalg.norm(x - np.asarray(station_positions[ref_id], dtype=np.float64))
    return np.array([
        (np.linalg.norm(x - np.asarray(station_positions[i], dtype=np.float64)) - r_ref) / C
        for i in ids
    ])


def _pick_estimate(estimates, pair, toa):
    if isinstance(estimates, dict):
        cand = estimates.get(pair)
        cand = [cand] if isinstance(cand, SyncEstimate) else list(cand or [])
    else:
        cand = [e for e in estimates if tuple(e.station_pair) == pair]
    if not cand:
        raise MissingSyncError(f"no sync estimate for station pair {pair}")
    return min(cand, key=lambda e: abs(toa - e.t_mid))


def tdoa_from_reports(reports, estimates, ref_id: int, *, window: float = 1.0,
                      validity: float = 60.0) -> list[TdoaMeasurement]:
    """Measurements for the telegram decoded by station ``ref_id``.

    ``reports`` holds at most one report per station for the telegram of
    interest; other stations' reports are matched by payload hash and a
    ``window`` (s) around the reference ToA. Non-reference ToAs are moved
    onto the reference clock with the nearest sync estimate of each pair.
    """
    good = [r for r in reports if r.crc_ok]
    refs = [r for r in good if r.station_id == ref_id]
    if not refs:
        log.warning("no decoded report from reference station %d; telegram unmatched", ref_id)
        return []
    ref = refs[0]
    key = payload_key(ref.payload)
    out = []
    for r in sorted(good, key=lambda r: r.station_id):
        if r.station_id == ref_id:
            continue
        if payload_key(r.payload) != key or abs(r.toa - ref.toa) > window:
            log.warning("report from station %d does not match the reference telegram", r.station_id)
            continue
        pair = (ref_id, r.station_id)
        est = _pick_estimate(estimates, pair, r.toa)
        corr = apply_correction(r.toa, est, toa_sigma=r.toa_sigma or 0.0, validity=validity)
        sigma = math.hypot(corr.sigma, ref.toa_sigma or 0.0)
        out.append(TdoaMeasurement(pair, corr.toa - ref.toa, sigma))
    if not out:
        log.warning("telegram %s heard by the reference station only; unmatched", key)
    return out


def _check_geometry(points: np.ndarray) -> None:
    dims = points.shape[1]
    if points.shape[0] < dims + 1:
        raise DegenerateGeometryError(f"{dims}-D fix needs at least {dims + 1} stations")
    centred = points - points.mean(axis=0)
    sv = np.linalg.svd(centred, compute_uv=False)
    if sv[-1] <= 1e-9 * max(sv[0], 1.0):
        raise DegenerateGeometryError("stations are collinear/coplanar; no unique fix")


def solve_position(measurements: list[TdoaMeasurement], station_positions: dict,
                   initial_guess=None, *, max_iter: int = 50, tol: float = 1e-4) -> PositionFix:
    """Weighted nonlinear least squares (Gauss-Newton with Levenberg damping).

    Minimizes ``sum(((|x - s_i| - |x - s_ref|) / c - dt_i)^2 / sigma_i^2)``.
    Convergence: step below ``tol`` metres. On hitting ``max_iter`` the last
    iterate is returned with ``converged=False``.
    """
    if not measurements:
        raise TdoaError("no measurements")
    refs = {m.pair[0] for m in measurements}
    if len(refs) != 1:
        raise TdoaError("all measurements must share one reference station")
    ref_id = refs.pop()
    ids = [m.pair[1] for m in measurements]
    pos = {k: np.asarray(v, dtype=np.float64) for k, v in station_positions.items()}
    s_ref = pos[ref_id]
    s = np.array([pos[i] for i in ids])
    dims = s_ref.size
    _check_geometry(np.vstack([s_ref, s]))
    dt = np.array([m.delta_t for m in measurements])
    sig = np.array([m.sigma for m in measurements])
    x = np.vstack([s_ref, s]).mean(axis=0) if initial_guess is None else np.asarray(
        initial_guess, dtype=np.float64).copy()

    def resid_jac(p):
        v = p - s
        vr = p - s_ref
        d = np.linalg.norm(v, axis=1)
        dr = np.linalg.norm(vr)
        r = ((d - dr) / C - dt) / sig
        u = v / np.maximum(d, 1e-12)[:, None] - vr / max(dr, 1e-12)
        return r, u / (C * sig)[:, None]

    r, j = resid_jac(x)
    cost = float(r @ r)
    history = [cost]
    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        jtj = j.T @ j
        g = j.T @ r
        while True:
            a = jtj + lam * np.diag(np.diag(jtj))
            try:
                step = -np.linalg.solve(a, g)
            except np.linalg.LinAlgError:
                raise DegenerateGeometryError("singular normal equations") from None
            r_new, j_new = resid_jac(x + step)
            c_new = float(r_new @ r_new)
            if c_new <= cost or lam > 1e12:
                break
            lam *= 10.0
        if c_new <= cost:
            x = x + step
            r, j, cost = r_new, j_new, c_new
            history.append(cost)
            lam = max(lam / 10.0, 1e-12)
        if np.linalg.norm(step) < tol:
            converged = True
            break
    jtj = j.T @ j
    if np.linalg.cond(jtj) > 1e14:
        raise DegenerateGeometryError("normal equations are singular at the solution")
    cov = np.linalg.inv(jtj)
    cov = 0.5 * (cov + cov.T)
    rms = float(np.sqrt(np.mean((r * sig) ** 2)))
    if dims != x.size:
        raise TdoaError("initial guess dimension mismatch")
    geo = j * (C * sig)[:, None]
    gdop = float(np.sqrt(np.trace(np.linalg.pinv(geo.T @ geo))))
    return PositionFix(x, cov, rms, len(measurements), converged, it, history, gdop)


def write_fixes_csv(rows, path) -> None:
    """``rows``: iterable of (telegram_id, PositionFix or None)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["telegram_id", "x_m", "y_m", "residual_rms_s", "converged"])
        for tid, fix in rows:
            if fix is None:
                w.writerow([tid, "", "", "", "false"])
            else:
                w.writerow([tid, repr(float(fix.position[0])), repr(float(fix.position[1])),
                            repr(fix.residual_rms), "true" if fix.converged else "false"])
