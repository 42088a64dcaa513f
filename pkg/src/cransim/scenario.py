"""Scenario configuration: JSON loading, validation and hashing.

All units are SI; level fields carry a ``_db`` / ``_dbm`` suffix. See
``docs/scenario.md`` for the document schema.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import MISSING, dataclass, field, fields
from importlib import resources
from pathlib import Path

from .channel import EmitterConfig, StationConfig
from .signal import Timestamp
from .waveforms import BANDWIDTH, DEFAULT_SLOTS, SooSpec, TelegramSpec


class ConfigError(ValueError):
    """Invalid scenario document; messages start with the offending field path."""


@dataclass(frozen=True)
class ScheduleConfig:
    interval: float = 90.0
    total: float = 9 * 3600.0


@dataclass(frozen=True)
class FrontendConfig:
    bits: int = 16
    n_subbands: int = 8
    fft_len: int = 2**14
    compress: bool = False
    farrow_taps: int = 24
    farrow_order: int = 7


@dataclass(frozen=True)
class TransportConfig:
    capacity_s: float = 120.0
    capture_s: float = 0.32
    pre_trigger_s: float = 0.02


@dataclass(frozen=True)
class SyncConfig:
    enabled: bool = True
    ref_id: int = 0
    duration: float = 0.25
    n_blocks: int = 16
    sigma_window: int = 20
    validity_s: float = 60.0


@dataclass(frozen=True)
class TdoaConfig:
    enabled: bool = True
    dims: int = 2


@dataclass
class ScenarioConfig:
    stations: list
    lpwan_emitter: EmitterConfig
    soo_emitter: EmitterConfig
    name: str = "scenario"
    es_n0_db: float = 24.0
    seed: int = 1
    f_s: float = 2.0e6
    f_res: float = float(2**21)
    epoch_ns: int = 1_700_000_000_000_000_000
    path_loss_exponent: float = 2.7
    phase_noise_std: float = 0.0
    multipath: tuple | None = None
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    telegram: dict = field(default_factory=dict)
    soo: dict = field(default_factory=dict)
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    transport: TransportConfig = field(default_factory=TransportConfig)
    sync: SyncConfig = field(default_factory=SyncConfig)
    tdoa: TdoaConfig = field(default_factory=TdoaConfig)
    source: dict | None = field(default=None, repr=False, compare=False)

    @property
    def t_start(self) -> Timestamp:
        return Timestamp(self.epoch_ns)

    @property
    def station_ids(self) -> list:
        return [s.id for s in self.stations]

    def station(self, station_id: int) -> StationConfig:
        for s in self.stations:
            if s.id == station_id:
                return s
        raise KeyError(f"unknown station {station_id}")

    def telegram_spec(self, payload: bytes | None = None) -> TelegramSpec:
        params = dict(self.telegram)
        if "freq_slots" in params:
            params["freq_slots"] = tuple(float(f) for f in params["freq_slots"])
        params.setdefault("sample_rate", self.f_s)
        if payload is not None:
            params["payload"] = payload
        elif "payload" in params and isinstance(params["payload"], str):
            params["payload"] = params["payload"].encode()
        return TelegramSpec(**params)

    def soo_spec(self, constellation_seed: int = 1) -> SooSpec:
        params = dict(self.soo)
        params.setdefault("n_fft", 2048)
        params.setdefault("cp_len", params["n_fft"] // 8)
        params.setdefault("n_active_carriers", SooSpec.max_active(self.f_s, params["n_fft"]))
        return SooSpec(sample_rate=self.f_s, constellation_seed=constellation_seed, **params)

    def validate(self) -> None:
        ids = [s.id for s in self.stations]
        if len(self.stations) < 2:
            raise ConfigError("stations: at least 2 stations required")
        seen = set()
        for i, sid in enumerate(ids):
            if sid in seen:
                raise ConfigError(f"stations[{i}].id: duplicate station id {sid}")
            seen.add(sid)
        dims = self.tdoa.dims
        for i, s in enumerate(self.stations):
            if len(s.position) not in (2, 3):
                raise ConfigError(f"stations[{i}].position: expected 2 or 3 coordinates")
            if s.noise_figure_db < 0:
                raise ConfigError(f"stations[{i}].noise_figure_db: must be non-negative")
        self.lpwan_emitter.validate("lpwan_emitter")
        self.soo_emitter.validate("soo_emitter")
        if self.f_s <= 0 or self.f_res <= 0:
            raise ConfigError("f_s: sample rates must be positive")
        if not 0.5 <= self.f_res / self.f_s <= 2.0:
            raise ConfigError("f_res: resampling ratio must lie in [0.5, 2]")
        if self.schedule.interval <= 0:
            raise ConfigError("schedule.interval: must be positive")
        if self.frontend.bits not in (8, 16):
            raise ConfigError("frontend.bits: must be 8 or 16")
        fl, nsb = self.frontend.fft_len, self.frontend.n_subbands
        if fl & (fl - 1) or nsb < 1 or fl % nsb:
            raise ConfigError("frontend.fft_len: must be a power of two divisible by n_subbands")
        if self.sync.ref_id not in seen:
            raise ConfigError(f"sync.ref_id: unknown station {self.sync.ref_id}")
        if self.sync.n_blocks < 3:
            raise ConfigError("sync.n_blocks: at least 3 blocks required")
        if self.tdoa.enabled:
            if dims not in (2, 3):
                raise ConfigError("tdoa.dims: must be 2 or 3")
            need = dims + 1
            if len(self.stations) < need:
                raise ConfigError(
                    f"stations: TDoA in {dims}D needs at least {need} stations, got {len(self.stations)}"
                )
        try:
            self.telegram_spec().validate()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"telegram: {exc}") from exc
        try:
            self.soo_spec().validate()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"soo: {exc}") from exc
        if self.transport.capture_s < self.sync.duration + self.transport.pre_trigger_s:
            raise ConfigError("transport.capture_s: shorter than the sync observation")

    def to_dict(self) -> dict:
        if self.source is not None:
            return copy.deepcopy(self.source)
        return _dump(self)

    def config_hash(self) -> str:
        doc = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(doc.encode()).hexdigest()[:16]


def _dump(cfg: ScenarioConfig) -> dict:
    out = {}
    for f in fields(cfg):
        if f.name == "source":
            continue
        v = getattr(cfg, f.name)
        if f.name == "stations":
            v = [_plain(s) for s in v]
        elif hasattr(v, "__dataclass_fields__"):
            v = _plain(v)
        out[f.name] = v
    return out


def _plain(obj) -> dict:
    d = {f.name: getattr(obj, f.name) for f in fields(obj)}
    for k, v in d.items():
        if isinstance(v, tuple):
            d[k] = list(v)
    return d


def _checked(path: str, default, value):
    """Coerce ``value`` to the scalar type of ``default``; other fields pass through."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true or false")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    elif isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{path}: expected a string")
    return value


def _defaults(cls) -> dict:
    return {f.name: f.default for f in fields(cls) if f.default is not MISSING}


def _build(cls, data, path, required=()):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    known = {f.name for f in fields(cls)}
    defaults = _defaults(cls)
    for key in data:
        if key not in known:
            raise ConfigError(f"{path}.{key}: unknown field")
    for key in required:
        if key not in data:
            raise ConfigError(f"{path}.{key}: required field missing")
    kwargs = {}
    for key, value in data.items():
        if key == "position":
            if not isinstance(value, (list, tuple)) or not all(
                isinstance(v, (int, float)) for v in value
            ):
                raise ConfigError(f"{path}.position: expected a list of numbers")
            value = tuple(float(v) for v in value)
        elif key in defaults:
            value = _checked(f"{path}.{key}", defaults[key], value)
        elif key == "id":
            value = _checked(f"{path}.id", 0, value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def from_dict(doc: dict) -> ScenarioConfig:
    """Build and validate a scenario from a parsed JSON document."""
    if not isinstance(doc, dict):
        raise ConfigError("<root>: expected an object")
    data = dict(doc)
    for key in ("stations", "lpwan_emitter", "soo_emitter"):
        if key not in data:
            raise ConfigError(f"{key}: required field missing")
    if not isinstance(data["stations"], list):
        raise ConfigError("stations: expected a list")
    stations = [
        _build(StationConfig, s, f"stations[{i}]", required=("id", "position"))
        for i, s in enumerate(data.pop("stations"))
    ]
    kwargs = {
        "stations": stations,
        "lpwan_emitter": _build(EmitterConfig, data.pop("lpwan_emitter"), "lpwan_emitter", ("position",)),
        "soo_emitter": _build(EmitterConfig, data.pop("soo_emitter"), "soo_emitter", ("position",)),
    }
    nested = {
        "schedule": ScheduleConfig,
        "frontend": FrontendConfig,
        "transport": TransportConfig,
        "sync": SyncConfig,
        "tdoa": TdoaConfig,
    }
    for key, cls in nested.items():
        if key in data:
            kwargs[key] = _build(cls, data.pop(key), key)
    known = {f.name for f in fields(ScenarioConfig)} - {"source"}
    defaults = _defaults(ScenarioConfig)
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"{key}: unknown field")
        if key in defaults:
            value = _checked(key, defaults[key], value)
        if key == "multipath" and value is not None:
            value = tuple((float(d), complex(g) if isinstance(g, (list, tuple)) else float(g))
                          for d, g in value)
        kwargs[key] = value
    cfg = ScenarioConfig(**kwargs)
    cfg.source = copy.deepcopy(doc)
    cfg.validate()
    return cfg


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        bundled = resources.files("cransim") / "data" / path.name
        if bundled.is_file():
            return from_dict(json.loads(bundled.read_text()))
        raise ConfigError(f"{path}: file not found")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"<root>: invalid JSON ({exc})") from exc
    return from_dict(doc)


def bundled_scenario(name: str = "ilmenau.json") -> ScenarioConfig:
    return from_dict(json.loads((resources.files("cransim") / "data" / name).read_text()))


def apply_overrides(doc: dict, overrides: dict) -> dict:
    """Set dotted keys (``"sync.duration"``, ``"stations.1.sco_ppm"``) in a document copy."""
    doc = copy.deepcopy(doc)
    for dotted, value in overrides.items():
        parts = dotted.split(".")
        node = doc
        for part in parts[:-1]:
            if isinstance(node, list):
                node = node[int(part)]
            else:
                node = node.setdefault(part, {})
        last = parts[-1]
        if isinstance(node, list):
            node[int(last)] = value
        else:
            node[last] = value
    return doc


__all__ = [
    "BANDWIDTH",
    "ConfigError",
    "DEFAULT_SLOTS",
    "FrontendConfig",
    "ScenarioConfig",
    "ScheduleConfig",
    "SyncConfig",
    "TdoaConfig",
    "TransportConfig",
    "apply_overrides",
    "bundled_scenario",
    "from_dict",
    "load_scenario",
]
