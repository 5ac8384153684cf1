"""Moving-window segmentation, per-window budgets and series statistics.

Percentiles use linear interpolation between order statistics (numpy's
default ``linear`` method). The coefficient of variation is in percent.
Failed windows stay in the series with ``ok=False`` and NaN values; nothing
is interpolated across them.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import estimator
from .protocol import RecordTable


@dataclass(frozen=True)
class WindowConfig:
    n: int = 30
    overlap_fraction: float = 0.5

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("window needs n >= 2 cycles")
        if not 0.0 <= self.overlap_fraction < 1.0:
            raise ValueError("overlap_fraction must lie in [0, 1)")

    @property
    def step(self) -> int:
        return max(1, int(round(self.n * (1.0 - self.overlap_fraction))))


def make_windows(cycle_count: int, config: WindowConfig = WindowConfig()) -> list[tuple[int, int]]:
    if cycle_count < 0:
        raise ValueError("cycle_count must be non-negative")
    step = config.step
    return [(s, s + config.n) for s in range(0, cycle_count - config.n + 1, step)]


@dataclass
class WindowEstimate:
    index: int
    start: int
    end: int
    midpoint: float  # hours
    point_label: str
    ok: bool
    budget: Optional[estimator.ErrorBudget] = None
    message: str = ""

    def value(self, quantity: str) -> float:
        return getattr(self.budget, quantity) if self.ok else math.nan

    def sigma(self, quantity: str) -> float:
        return self.budget.sigma(quantity) if self.ok else math.nan


def _fit_window(args):
    table, method, bias_correct, resamples, seed = args
    return estimator.estimate_records(table, method=method, bias_correct=bias_correct, resamples=resamples, seed=seed)


def window_series(
    records: RecordTable,
    config: WindowConfig = WindowConfig(),
    method: str = estimator.OFFSET_FREE,
    bias_correct: bool = True,
    resamples: int = 1000,
    seed: int = 0,
    workers: int = 1,
) -> dict[str, list[WindowEstimate]]:
    """Fit every window of every operating point independently.

    Windows cover cycle indices ``0 .. max(cycle)``; the bootstrap seed of
    window ``i`` is ``seed + i`` so windows can be fitted in any order.
    """
    out: dict[str, list[WindowEstimate]] = {}
    if len(records) == 0:
        return out
    n_cycles = int(records.cycle.max()) + 1
    windows = make_windows(n_cycles, config)
    labels = list(dict.fromkeys(records.point_label.tolist()))
    jobs, keys = [], []
    for label in labels:
        sel = records.select(records.point_label == label)
        for i, (a, b) in enumerate(windows):
            mask = (sel.cycle >= a) & (sel.cycle < b)
            part = sel.select(mask)
            jobs.append((part, method, bias_correct, resamples, seed + i))
            mid = float(part.wall_time.mean()) if len(part) else math.nan
            keys.append((label, i, a, b, mid))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            fits = list(ex.map(_fit_window, jobs, chunksize=4))
    else:
        fits = [_fit_window(j) for j in jobs]
    for (label, i, a, b, mid), fit in zip(keys, fits):
        out.setdefault(label, []).append(
            WindowEstimate(i, a, b, mid, label, fit.ok, fit.budget, fit.message)
        )
    return out


@dataclass(frozen=True)
class SummaryStats:
    n: int
    mean: float
    sd: float
    median: float
    q25: float
    q75: float
    cv: float  # percent; NaN when undefined
    cv_defined: bool = True

    @property
    def iqr(self) -> float:
        return self.q75 - self.q25


def summarize(values: Sequence[float]) -> SummaryStats:
    """Mean, SD (ddof=1), median, quartiles and CV of the finite values."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size < 2:
        raise ValueError("summarize needs at least two finite values")
    mean = float(v.mean())
    sd = float(v.std(ddof=1))
    if np.ptp(v) == 0.0:
        sd = 0.0
    q25, med, q75 = (float(q) for q in np.percentile(v, [25, 50, 75]))
    defined = mean != 0.0
    cv = 100.0 * sd / abs(mean) if defined else math.nan
    return SummaryStats(int(v.size), mean, sd, med, q25, q75, cv, defined)


@dataclass(frozen=True)
class HistogramFit:
    edges: np.ndarray
    counts: np.ndarray
    mu: float
    sigma: float
    degenerate: bool = False


def histogram_fit(values: Sequence[float], bins: int = 15) -> HistogramFit:
    """Equal-width histogram over [min, max] plus a moment-matched normal (mean, SD ddof=1)."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size < 2:
        raise ValueError("histogram_fit needs at least two finite values")
    mu = float(v.mean())
    if np.ptp(v) == 0.0:
        return HistogramFit(np.array([v[0], v[0]]), np.array([v.size]), mu, 0.0, True)
    counts, edges = np.histogram(v, bins=bins, range=(v.min(), v.max()))
    return HistogramFit(edges, counts, mu, float(v.std(ddof=1)), False)


def series_values(series: Sequence[WindowEstimate], quantity: str) -> np.ndarray:
    return np.array([w.value(quantity) for w in series])
