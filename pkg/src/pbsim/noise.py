"""Time-dependent gate noise: baseline decoherence, a telegraphic TLS, drift, miscalibration.

Every operating point receives one ``PauliTransferMap`` per cycle, applied after
each ideal Clifford. The map is

    rotation(miscalibration + TLS pull) o depolarizing o dephasing o damping

with the TLS contributing an extra Lorentzian relaxation rate and a Lorentzian
frequency pull that feeds the rotation angle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .qubit import (
    PauliTransferMap,
    amplitude_damping,
    dephasing,
    depolarizing,
    rotation,
)

DRIFTABLE = ("t1_base", "tphi_base", "detuning", "overrotation", "f_center")


@dataclass(frozen=True)
class OperatingPoint:
    label: str
    frequency: float  # GHz


@dataclass(frozen=True)
class Miscalibration:
    detuning: float = 0.0  # Hz
    overrotation: float = 0.0  # rad per gate
    axis: tuple = (1.0, 0.0, 0.0)


@dataclass(frozen=True)
class Recalibration:
    """Miscalibration replaced from ``at_hours`` onward."""

    at_hours: float
    detuning: float = 0.0
    overrotation: float = 0.0


@dataclass(frozen=True)
class TelegraphParams:
    rate_up: float = 0.0  # 1/hour, level 0 -> 1
    rate_down: float = 0.0  # 1/hour, level 1 -> 0
    frequency_shift: float = 0.0  # GHz added to the TLS centre at level 1
    initial_level: int = 0
    forced_switches: tuple = ()  # hours at which the level toggles deterministically


@dataclass(frozen=True)
class TLSParams:
    f_center: float  # GHz
    linewidth: float  # GHz (Lorentzian half width)
    gamma_peak: float = 0.0  # 1/s extra relaxation on resonance
    coherent_pull: float = 0.0  # Hz per unit Lorentzian weight
    telegraph: TelegraphParams = field(default_factory=TelegraphParams)

    def __post_init__(self):
        if not self.linewidth > 0:
            raise ValueError("TLS linewidth must be positive")
        tg = self.telegraph
        if self.gamma_peak < 0 or tg.rate_up < 0 or tg.rate_down < 0:
            raise ValueError("TLS rates must be non-negative")


@dataclass(frozen=True)
class DriftParam:
    step: float  # standard deviation per sqrt(hour)
    low: float
    high: float

    def __post_init__(self):
        if self.step < 0:
            raise ValueError("drift step must be non-negative")
        if not self.low <= self.high:
            raise ValueError("drift bounds must be ordered")


@dataclass(frozen=True)
class DriftSpec:
    params: dict  # name -> DriftParam

    def __post_init__(self):
        unknown = set(self.params) - set(DRIFTABLE)
        if unknown:
            raise ValueError(f"cannot drift {sorted(unknown)}; allowed: {DRIFTABLE}")


@dataclass(frozen=True)
class ScenarioConfig:
    t1_base: float = 5e-6  # s; math.inf disables relaxation
    tphi_base: Optional[float] = None  # s; None means 2 * t1_base
    gate_time: float = 25e-9  # s
    operating_points: tuple = (OperatingPoint("f1", 4.6153),)
    miscalibration: Miscalibration = field(default_factory=Miscalibration)
    depolarizing: float = 1.0  # extra depolarizing shrink per gate; 1 disables
    tls: Optional[TLSParams] = None
    drift: Optional[DriftSpec] = None
    recalibrations: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if not self.t1_base > 0 or not self.gate_time > 0:
            raise ValueError("times must be positive")
        if self.tphi_base is not None and not self.tphi_base > 0:
            raise ValueError("tphi_base must be positive")
        if not 0.0 <= self.depolarizing <= 1.0:
            raise ValueError("depolarizing must lie in [0, 1]")
        for op in self.operating_points:
            if not op.frequency > 0:
                raise ValueError(f"operating point {op.label!r} needs a positive frequency")
        labels = [op.label for op in self.operating_points]
        if len(set(labels)) != len(labels):
            raise ValueError("operating point labels must be unique")

    @property
    def tphi(self) -> float:
        return 2.0 * self.t1_base if self.tphi_base is None else self.tphi_base

    def point(self, label: str) -> OperatingPoint:
        for op in self.operating_points:
            if op.label == label:
                return op
        raise KeyError(label)


@dataclass(frozen=True)
class TelegraphState:
    level: int = 0
    last_switch_time: float = 0.0  # hours

    def __post_init__(self):
        if self.level not in (0, 1):
            raise ValueError("telegraph level must be 0 or 1")


def telegraph_step(
    state: TelegraphState,
    dt: float,
    params: TelegraphParams,
    rng: np.random.Generator,
    now: Optional[float] = None,
) -> TelegraphState:
    """Advance the two-level Markov switch by ``dt`` hours (at most one switch)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    rate = params.rate_up if state.level == 0 else params.rate_down
    u = rng.random()
    if rate > 0 and u < -math.expm1(-rate * dt):
        t = state.last_switch_time + dt if now is None else now
        return TelegraphState(1 - state.level, t)
    return state


def lorentzian_weight(f: float, f_eff: float, linewidth: float) -> float:
    k2 = linewidth * linewidth
    d = f - f_eff
    return k2 / (d * d + k2)


def tls_center(tls: TLSParams, tls_state: Optional[TelegraphState], drift_state=None) -> float:
    f0 = tls.f_center
    if drift_state is not None and "f_center" in drift_state:
        f0 = drift_state["f_center"]
    level = 0 if tls_state is None else tls_state.level
    return f0 + level * tls.telegraph.frequency_shift


def t1_effective(
    f: float,
    scenario: ScenarioConfig,
    tls_state: Optional[TelegraphState] = None,
    drift_state: Optional[dict] = None,
) -> float:
    """Relaxation time at frequency ``f`` (GHz), in seconds."""
    t1 = (drift_state or {}).get("t1_base", scenario.t1_base)
    rate = 0.0 if math.isinf(t1) else 1.0 / t1
    tls = scenario.tls
    if tls is not None and tls.gamma_peak > 0:
        rate += tls.gamma_peak * lorentzian_weight(f, tls_center(tls, tls_state, drift_state), tls.linewidth)
    return math.inf if rate == 0.0 else 1.0 / rate


def active_miscalibration(scenario: ScenarioConfig, wall_time: float, drift_state=None):
    det = scenario.miscalibration.detuning
    over = scenario.miscalibration.overrotation
    for ev in sorted(scenario.recalibrations, key=lambda e: e.at_hours):
        if ev.at_hours <= wall_time:
            det, over = ev.detuning, ev.overrotation
    if drift_state:
        # Drift walks an offset on top of the (re)calibrated values.
        det += drift_state.get("detuning", 0.0)
        over += drift_state.get("overrotation", 0.0)
    return det, over


def rotation_angle(
    scenario: ScenarioConfig,
    point: OperatingPoint,
    wall_time: float = 0.0,
    tls_state: Optional[TelegraphState] = None,
    drift_state: Optional[dict] = None,
) -> float:
    det, over = active_miscalibration(scenario, wall_time, drift_state)
    tls = scenario.tls
    pull = 0.0
    if tls is not None and tls.coherent_pull != 0.0:
        pull = tls.coherent_pull * lorentzian_weight(
            point.frequency, tls_center(tls, tls_state, drift_state), tls.linewidth
        )
    return 2.0 * math.pi * (det + pull) * scenario.gate_time + over


def gate_channel(
    scenario: ScenarioConfig,
    point: OperatingPoint,
    wall_time: float = 0.0,
    tls_state: Optional[TelegraphState] = None,
    drift_state: Optional[dict] = None,
) -> PauliTransferMap:
    tg = scenario.gate_time
    t1 = t1_effective(point.frequency, scenario, tls_state, drift_state)
    gamma = 0.0 if math.isinf(t1) else -math.expm1(-tg / t1)
    tphi = (drift_state or {}).get("tphi_base", scenario.tphi)
    lam = 1.0 if math.isinf(tphi) else math.exp(-tg / tphi)
    theta = rotation_angle(scenario, point, wall_time, tls_state, drift_state)

    ch = amplitude_damping(gamma)
    if lam != 1.0:
        ch = dephasing(lam) @ ch
    if scenario.depolarizing != 1.0:
        ch = depolarizing(scenario.depolarizing) @ ch
    if theta != 0.0:
        ch = rotation(scenario.miscalibration.axis, theta) @ ch
    return ch


def initial_drift_state(scenario: ScenarioConfig) -> Optional[dict]:
    if scenario.drift is None:
        return None
    base = {
        "t1_base": scenario.t1_base,
        "tphi_base": scenario.tphi,
        "detuning": 0.0,
        "overrotation": 0.0,
        "f_center": scenario.tls.f_center if scenario.tls else 0.0,
    }
    return {name: base[name] for name in scenario.drift.params}


def _reflect(x: float, lo: float, hi: float) -> float:
    if lo == hi:
        return lo
    span = hi - lo
    y = (x - lo) % (2.0 * span)
    return lo + (y if y <= span else 2.0 * span - y)


def drift_step(state: dict, dt: float, spec: DriftSpec, rng: np.random.Generator) -> dict:
    out = {}
    for name in sorted(spec.params):
        p = spec.params[name]
        x = state[name] + p.step * math.sqrt(dt) * rng.standard_normal()
        out[name] = _reflect(x, p.low, p.high)
    return out


@dataclass(frozen=True)
class Snapshot:
    """Frozen environment for one cycle."""

    wall_time: float
    tls_state: Optional[TelegraphState]
    drift_state: Optional[dict]


class ScenarioEvolution:
    """Owns the hidden telegraph and drift state; advanced in wall-time order."""

    def __init__(self, scenario: ScenarioConfig, rng: np.random.Generator):
        self.scenario = scenario
        self.rng = rng
        self.time = 0.0
        tls = scenario.tls
        self.tls_state = TelegraphState(tls.telegraph.initial_level, 0.0) if tls else None
        self.drift_state = initial_drift_state(scenario)

    def snapshot(self) -> Snapshot:
        drift = None if self.drift_state is None else dict(self.drift_state)
        return Snapshot(self.time, self.tls_state, drift)

    def advance(self, to_time: float) -> Snapshot:
        if to_time < self.time:
            raise ValueError("scenario time cannot go backwards")
        dt = to_time - self.time
        if dt > 0:
            tls = self.scenario.tls
            if tls is not None:
                for ts in sorted(tls.telegraph.forced_switches):
                    if self.time < ts <= to_time:
                        self.tls_state = TelegraphState(1 - self.tls_state.level, ts)
                self.tls_state = telegraph_step(self.tls_state, dt, tls.telegraph, self.rng, now=to_time)
            if self.drift_state is not None:
                self.drift_state = drift_step(self.drift_state, dt, self.scenario.drift, self.rng)
            self.time = to_time
        return self.snapshot()

    def channel(self, point: OperatingPoint, snap: Optional[Snapshot] = None) -> PauliTransferMap:
        snap = snap or self.snapshot()
        return gate_channel(self.scenario, point, snap.wall_time, snap.tls_state, snap.drift_state)


def with_points(scenario: ScenarioConfig, *points: OperatingPoint) -> ScenarioConfig:
    return replace(scenario, operating_points=tuple(points))
