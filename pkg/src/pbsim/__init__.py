"""Single-qubit purity benchmarking: simulation, estimation and time series."""

from .estimator import ErrorBudget, diamond_bounds, estimate_records
from .kernels import BACKEND
from .noise import ScenarioConfig, gate_channel
from .protocol import ExperimentPlan, simulate
from .timeseries import WindowConfig, summarize, window_series

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ErrorBudget",
    "ExperimentPlan",
    "ScenarioConfig",
    "WindowConfig",
    "diamond_bounds",
    "estimate_records",
    "gate_channel",
    "simulate",
    "summarize",
    "window_series",
]
