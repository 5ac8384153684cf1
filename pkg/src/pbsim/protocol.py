"""PB sequence generation and noisy execution over cycles.

One cycle runs, for each operating point, one random sequence per length in
``M_set``. Each random gate list is executed four times, differing only in the
compiled final Clifford: measurement bases z, x, y and the flipped-target z
variant. The state starts in the ground state (-z) and every outcome is a count
of ground-state results after the final gate.

Stream layout (see ``rng``): the sequence for (cycle, point, length) draws its
``m`` gate indices and then one binomial per variant, in ``VARIANTS`` order,
from stream ``(SEQUENCES, cycle, point, length_index)``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from . import clifford, kernels, rng as rngmod
from .fitting import B_HAT, fit_decay
from .noise import OperatingPoint, ScenarioConfig, ScenarioEvolution, Snapshot, gate_channel, t1_effective
from .qubit import GROUND_AXIS, BlochVector, PauliTransferMap, ShotCounts, apply_map, survival_probability

DEFAULT_M_SET = (2, 6, 13, 25, 50, 100, 200)
VARIANTS = ("z", "x", "y", "z_flip")
_VARIANT_ARGS = {"z": ("z", False), "x": ("x", False), "y": ("y", False), "z_flip": ("z", True)}

_ROT_F = clifford.ROTATIONS.astype(float)


@dataclass(frozen=True)
class T1ScanSpec:
    frequencies: tuple  # GHz
    delays: Optional[tuple] = None  # s; None -> 8 log-spaced from gate_time to 3 t1_base
    shots: int = 500
    noise_free: bool = False


@dataclass(frozen=True)
class ExperimentPlan:
    M_set: tuple = DEFAULT_M_SET
    cycles: int = 30
    shots_per_variant: int = 1000
    cycle_period: float = 0.25  # hours
    points: Optional[tuple] = None  # labels; None -> every scenario point
    t1_scan: Optional[T1ScanSpec] = None
    repetition_time: float = 100e-6  # s per shot (readout + reset)

    def __post_init__(self):
        M = tuple(int(m) for m in self.M_set)
        if not M or any(m < 1 for m in M) or any(b <= a for a, b in zip(M, M[1:])):
            raise ValueError("M_set must be strictly increasing positive lengths")
        object.__setattr__(self, "M_set", M)
        if self.cycles < 0 or self.shots_per_variant < 1 or not self.cycle_period > 0:
            raise ValueError("cycles >= 0, shots >= 1 and cycle_period > 0 required")

    def resolve_points(self, scenario: ScenarioConfig) -> list[OperatingPoint]:
        if self.points is None:
            return list(scenario.operating_points)
        out = []
        for label in self.points:
            try:
                out.append(scenario.point(label))
            except KeyError:
                raise ValueError(f"plan references unknown operating point {label!r}") from None
        return out

    def busy_time(self, scenario: ScenarioConfig) -> float:
        """Simulated device time per cycle, hours."""
        n_pts = len(self.resolve_points(scenario))
        per_point = sum(
            len(VARIANTS) * self.shots_per_variant * ((m + 1) * scenario.gate_time + self.repetition_time)
            for m in self.M_set
        )
        busy = n_pts * per_point
        if self.t1_scan is not None:
            delays = t1_delays(self.t1_scan, scenario)
            busy += len(self.t1_scan.frequencies) * self.t1_scan.shots * sum(d + self.repetition_time for d in delays)
        return busy / 3600.0

    def validate(self, scenario: ScenarioConfig) -> None:
        self.resolve_points(scenario)
        if self.cycle_period < self.busy_time(scenario):
            raise ValueError(
                f"cycle_period {self.cycle_period} h shorter than busy time {self.busy_time(scenario):.4g} h"
            )
        if self.t1_scan is not None and not self.t1_scan.frequencies:
            raise ValueError("t1_scan needs a non-empty frequency grid")


@dataclass
class SubSequence:
    m: int
    gates: np.ndarray  # Clifford indices, application order
    inverses: dict  # variant -> Clifford index of the compiled final gate

    def executed(self, variant: str) -> np.ndarray:
        return np.append(self.gates, self.inverses[variant])


@dataclass
class PBSequence:
    sub_sequences: list


def compiled_inverses(gates: Sequence[int]) -> dict:
    net = clifford.net_index(gates)
    inv = int(clifford.INV[net])
    out = {}
    for v in VARIANTS:
        basis, flip = _VARIANT_ARGS[v]
        idx = int(clifford.MUL[clifford.BASIS_ROTATION[basis].index, inv])
        if flip:
            idx = int(clifford.MUL[clifford.X_PI.index, idx])
        out[v] = idx
    return out


def build_sub_sequence(m: int, rng: np.random.Generator) -> SubSequence:
    gates = clifford.sample_indices(rng, m)
    return SubSequence(m, gates, compiled_inverses(gates))


def build_pb_sequence(M_set: Sequence[int], rng: np.random.Generator) -> PBSequence:
    return PBSequence([build_sub_sequence(m, rng) for m in M_set])


def execute_sequence(
    sub: SubSequence,
    variant: str,
    channel: PauliTransferMap,
    shots: int,
    rng: Optional[np.random.Generator] = None,
) -> tuple[float, Optional[ShotCounts]]:
    """Reference (unbatched) execution of one variant.

    Returns the exact ground-state probability and, when ``rng`` is given,
    sampled counts.
    """
    state = BlochVector.from_array(GROUND_AXIS)
    for g in sub.executed(variant):
        rotated = BlochVector.from_array(_ROT_F[g] @ state.as_array())
        state = apply_map(channel, rotated)
    prob = survival_probability(state, GROUND_AXIS)
    counts = None if rng is None else ShotCounts(shots, int(rng.binomial(shots, prob)))
    return prob, counts


def fused_maps(channel: PauliTransferMap) -> np.ndarray:
    """``M @ R_g`` for every Clifford ``g``: one noisy gate as a single affine map."""
    return np.einsum("ij,gjk->gik", channel.M, _ROT_F)


@dataclass(frozen=True)
class MeasurementRecord:
    cycle: int
    wall_time: float
    point_label: str
    m: int
    variant: str
    shots: int
    ones: int
    sequence_id: int


@dataclass
class RecordTable:
    """Column store of measurement records."""

    cycle: np.ndarray
    wall_time: np.ndarray
    point_label: np.ndarray
    m: np.ndarray
    variant: np.ndarray
    shots: np.ndarray
    ones: np.ndarray
    sequence_id: np.ndarray

    COLUMNS = ("cycle", "wall_time", "point_label", "m", "variant", "shots", "ones", "sequence_id")

    def __len__(self):
        return int(self.cycle.size)

    def __post_init__(self):
        if np.any(self.ones < 0) or np.any(self.ones > self.shots):
            raise ValueError("ones must lie in [0, shots]")

    @classmethod
    def empty(cls) -> "RecordTable":
        i = np.zeros(0, dtype=np.int64)
        return cls(i, np.zeros(0), np.zeros(0, dtype=object), i, np.zeros(0, dtype=object), i, i, i)

    @classmethod
    def from_records(cls, records) -> "RecordTable":
        records = list(records)
        if not records:
            return cls.empty()
        cols = {c: [getattr(r, c) for r in records] for c in cls.COLUMNS}
        return cls(
            np.array(cols["cycle"], dtype=np.int64),
            np.array(cols["wall_time"], dtype=float),
            np.array(cols["point_label"], dtype=object),
            np.array(cols["m"], dtype=np.int64),
            np.array(cols["variant"], dtype=object),
            np.array(cols["shots"], dtype=np.int64),
            np.array(cols["ones"], dtype=np.int64),
            np.array(cols["sequence_id"], dtype=np.int64),
        )

    @classmethod
    def concat(cls, tables) -> "RecordTable":
        tables = [t for t in tables if len(t)]
        if not tables:
            return cls.empty()
        return cls(*(np.concatenate([getattr(t, c) for t in tables]) for c in cls.COLUMNS))

    def select(self, mask) -> "RecordTable":
        return RecordTable(*(getattr(self, c)[mask] for c in self.COLUMNS))

    def records(self) -> Iterator[MeasurementRecord]:
        for i in range(len(self)):
            yield MeasurementRecord(
                int(self.cycle[i]),
                float(self.wall_time[i]),
                str(self.point_label[i]),
                int(self.m[i]),
                str(self.variant[i]),
                int(self.shots[i]),
                int(self.ones[i]),
                int(self.sequence_id[i]),
            )


@dataclass(frozen=True)
class T1Sample:
    cycle: int
    wall_time: float  # hours
    frequency: float  # GHz
    t1: float  # s; NaN when the fit failed
    t1_true: float


@dataclass
class SimulationResult:
    records: RecordTable
    t1_samples: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)


def t1_delays(spec: T1ScanSpec, scenario: ScenarioConfig) -> np.ndarray:
    if spec.delays is not None:
        return np.asarray(spec.delays, dtype=float)
    hi = 3.0 * (scenario.t1_base if math.isfinite(scenario.t1_base) else 1e-4)
    return np.geomspace(scenario.gate_time, hi, 8)


def t1_scan(
    spec: T1ScanSpec,
    scenario: ScenarioConfig,
    snapshot: Snapshot,
    rng: Optional[np.random.Generator] = None,
    cycle: int = 0,
    seed: Optional[int] = None,
) -> list[T1Sample]:
    """Fit T1 at each grid frequency from sampled excited-state decay."""
    if not spec.frequencies:
        raise ValueError("t1_scan needs a non-empty frequency grid")
    delays = t1_delays(spec, scenario)
    scale = float(delays.max())
    out = []
    for fi, f in enumerate(spec.frequencies):
        t1 = t1_effective(f, scenario, snapshot.tls_state, snapshot.drift_state)
        probs = np.exp(-delays / t1) if math.isfinite(t1) else np.ones_like(delays)
        if spec.noise_free:
            y = probs
        else:
            g = rng if rng is not None else rngmod.stream(scenario.seed if seed is None else seed, rngmod.T1_SCAN, cycle, fi)
            y = g.binomial(spec.shots, probs) / spec.shots
        fit = fit_decay(delays / scale, y, model=B_HAT)
        fitted = -scale / math.log(fit.rate) if fit.ok and 0 < fit.rate < 1 else math.nan
        out.append(T1Sample(cycle, snapshot.wall_time, float(f), fitted, t1))
    return out


def scenario_snapshots(plan: ExperimentPlan, scenario: ScenarioConfig, seed: int) -> list[Snapshot]:
    evo = ScenarioEvolution(scenario, rngmod.stream(seed, rngmod.SCENARIO))
    return [evo.advance(c * plan.cycle_period) for c in range(plan.cycles)]


def _run_chunk(args):
    plan, scenario, seed, cycles, snapshots = args
    points = plan.resolve_points(scenario)
    n_pts, n_len = len(points), len(plan.M_set)
    n_seq = len(cycles) * n_pts * n_len

    fused = np.empty((len(cycles) * n_pts, clifford.GROUP_SIZE, 3, 3))
    shift = np.empty((len(cycles) * n_pts, 3))
    channel_of = np.empty(n_seq, dtype=np.int64)
    offsets = np.zeros(n_seq + 1, dtype=np.int64)
    gate_chunks, inverse_idx, shot_rngs = [], np.empty((n_seq, len(VARIANTS)), dtype=np.int64), []
    s = 0
    for ci, (c, snap) in enumerate(zip(cycles, snapshots)):
        for pi, point in enumerate(points):
            ch = gate_channel(scenario, point, snap.wall_time, snap.tls_state, snap.drift_state)
            k = ci * n_pts + pi
            fused[k] = fused_maps(ch)
            shift[k] = ch.t
            for li, m in enumerate(plan.M_set):
                g = rngmod.stream(seed, rngmod.SEQUENCES, c, pi, li)
                sub = build_sub_sequence(m, g)
                gate_chunks.append(sub.gates)
                inverse_idx[s] = [sub.inverses[v] for v in VARIANTS]
                channel_of[s] = k
                offsets[s + 1] = offsets[s] + m
                shot_rngs.append(g)
                s += 1
    gates = np.concatenate(gate_chunks) if gate_chunks else np.zeros(0, dtype=np.int64)
    beta = kernels.evolve(gates, offsets, channel_of, fused, shift, GROUND_AXIS)

    # Final compiled gate per variant, then survival against the ground axis.
    G = fused[channel_of[:, None], inverse_idx]  # (n_seq, 4, 3, 3)
    final = np.einsum("nvij,nj->nvi", G, beta) + shift[channel_of][:, None, :]
    prob = np.clip(0.5 * (1.0 + final @ GROUND_AXIS), 0.0, 1.0)
    ones = np.empty_like(inverse_idx)
    for i, g in enumerate(shot_rngs):
        ones[i] = g.binomial(plan.shots_per_variant, prob[i])
    return prob, ones


def simulate(
    plan: ExperimentPlan,
    scenario: ScenarioConfig,
    seed: Optional[int] = None,
    workers: Optional[int] = None,
) -> SimulationResult:
    """Run every cycle of ``plan``; records come out in (cycle, point, length, variant) order."""
    plan.validate(scenario)
    seed = scenario.seed if seed is None else seed
    points = plan.resolve_points(scenario)
    snaps = scenario_snapshots(plan, scenario, seed)
    cycles = list(range(plan.cycles))
    workers = workers if workers is not None else int(os.environ.get("PBSIM_WORKERS", "1") or 1)

    chunk = 256
    jobs = [
        (plan, scenario, seed, cycles[i : i + chunk], snaps[i : i + chunk]) for i in range(0, len(cycles), chunk)
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_run_chunk, jobs))
    else:
        parts = [_run_chunk(j) for j in jobs]

    n_pts, n_len, n_var = len(points), len(plan.M_set), len(VARIANTS)
    n = plan.cycles * n_pts * n_len * n_var
    if parts:
        ones = np.concatenate([p[1] for p in parts]).reshape(-1)
    else:
        ones = np.zeros(0, dtype=np.int64)
    cyc = np.repeat(np.arange(plan.cycles), n_pts * n_len * n_var)
    labels = np.array([p.label for p in points], dtype=object)
    table = RecordTable(
        cycle=cyc,
        wall_time=cyc * plan.cycle_period,
        point_label=np.tile(np.repeat(labels, n_len * n_var), plan.cycles),
        m=np.tile(np.repeat(np.array(plan.M_set), n_var), plan.cycles * n_pts),
        variant=np.tile(np.array(VARIANTS, dtype=object), plan.cycles * n_pts * n_len),
        shots=np.full(n, plan.shots_per_variant, dtype=np.int64),
        ones=ones.astype(np.int64),
        sequence_id=np.repeat(np.arange(plan.cycles * n_pts * n_len), n_var),
    )

    t1 = []
    if plan.t1_scan is not None:
        for c, snap in zip(cycles, snaps):
            t1.extend(t1_scan(plan.t1_scan, scenario, snap, cycle=c, seed=seed))
    return SimulationResult(table, t1, snaps)


def run_cycles(plan: ExperimentPlan, scenario: ScenarioConfig, seed: Optional[int] = None) -> Iterator[MeasurementRecord]:
    yield from simulate(plan, scenario, seed).records.records()


def exact_probabilities(plan: ExperimentPlan, scenario: ScenarioConfig, seed: Optional[int] = None) -> np.ndarray:
    """Noise-model survival probabilities before shot sampling, shape (cycles*points*lengths, 4)."""
    seed = scenario.seed if seed is None else seed
    snaps = scenario_snapshots(plan, scenario, seed)
    prob, _ = _run_chunk((plan, scenario, seed, list(range(plan.cycles)), snaps))
    return prob
