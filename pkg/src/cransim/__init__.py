"""Cloud-RAN LPWAN localization simulator.

Stations digitize an LPWAN channel and a broadcast signal of opportunity,
serve timestamped IQ over HTTP, and a central aggregator synchronizes the
station clocks and locates emitters by TDoA.
"""

from .decoder import TelegramReport, decode_stream, detect_telegram
from .experiments import run_experiment
from .pipeline import ExperimentResult, run_scenario
from .scenario import ConfigError, ScenarioConfig, bundled_scenario, load_scenario
from .signal import BasebandSignal, Timestamp
from .sync import SyncEstimate, SyncParams, estimate_sync
from .tdoa import PositionFix, TdoaMeasurement, solve_position

__version__ = "0.1.0"

__all__ = [
    "BasebandSignal",
    "ConfigError",
    "ExperimentResult",
    "PositionFix",
    "ScenarioConfig",
    "SyncEstimate",
    "SyncParams",
    "TdoaMeasurement",
    "TelegramReport",
    "Timestamp",
    "__version__",
    "bundled_scenario",
    "decode_stream",
    "detect_telegram",
    "estimate_sync",
    "load_scenario",
    "run_experiment",
    "run_scenario",
    "solve_position",
]
