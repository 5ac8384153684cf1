"""From measurement records to error budgets.

Two pipelines are provided:

``offset_free`` (default)
    ``a_hat`` per sequence from the paired z / z_flip variants, fitted to
    ``A p^m + 1/2``; ``b_hat`` per length fitted to ``A u^m``.
``with_offset``
    z-survival fitted to ``A p^m + B`` and mean purity to ``A u^m + B``.

``b_hat`` combines the flip-paired z half-difference ``d = (s_z - s_flip)/2``
(its square, averaged over sequences) with the across-sequence variance of the
x and y expectations. Summing plain variances over all three bases would vanish
for depolarizing noise, where every sequence lands on the same Bloch vector.
All squared quantities are corrected for binomial shot noise by default.

Non-unital noise (relaxation) adds a random-walk term to the Bloch vector:
with per-gate shift ``t`` the mean squared length obeys
``b(m) = A u^m + |t|^2 (1 - u^m) / (1 - u)``. The paired sum
``(s_z + s_flip)/2`` measures the z component of ``t`` directly, so the
offset-free fit subtracts that known term instead of fitting a free offset.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import rng as rngmod
from .fitting import A_HAT, B_HAT, P_WITH_OFFSET, PBAR_EQ12, DecayFit, fit_decay, fit_decay_batch
from .protocol import VARIANTS, MeasurementRecord, RecordTable

OFFSET_FREE = "offset_free"
WITH_OFFSET = "with_offset"
METHODS = (OFFSET_FREE, WITH_OFFSET)

MIN_WEIGHTED = 5  # sequences per length below which fits are unweighted
MIN_BOOTSTRAP = 10
CI_LEVEL = 0.68
_Z = {v: i for i, v in enumerate(VARIANTS)}


@dataclass(frozen=True)
class ExpectationTriple:
    x: float
    y: float
    z: float
    shots: tuple = (1, 1, 1)

    def __post_init__(self):
        for v in (self.x, self.y, self.z):
            if not -1.0 <= v <= 1.0:
                raise ValueError(f"expectation {v} outside [-1, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


def expectation(ones, shots):
    return 2.0 * np.asarray(ones, dtype=float) / np.asarray(shots, dtype=float) - 1.0


def shot_variance(ones, shots):
    """Unbiased estimate of Var(2 p_hat - 1) for binomial counts."""
    ones = np.asarray(ones, dtype=float)
    shots = np.asarray(shots, dtype=float)
    p = ones / shots
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(shots > 1, 4.0 * p * (1.0 - p) / (shots - 1.0), 0.0)


def expectations_from_records(records: Sequence[MeasurementRecord]) -> ExpectationTriple:
    by_variant = {r.variant: r for r in records}
    ids = {r.sequence_id for r in records}
    if len(ids) > 1:
        raise ValueError(f"records span several sequences: {sorted(ids)}")
    missing = [v for v in ("x", "y", "z") if v not in by_variant]
    if missing:
        raise ValueError(f"sequence {ids.pop() if ids else '?'} is missing variants {missing}")
    x, y, z = (by_variant[v] for v in ("x", "y", "z"))
    return ExpectationTriple(
        float(expectation(x.ones, x.shots)),
        float(expectation(y.ones, y.shots)),
        float(expectation(z.ones, z.shots)),
        (x.shots, y.shots, z.shots),
    )


def purity_point(triple: ExpectationTriple, bias_correct: bool = True) -> float:
    s = triple.as_array()
    val = float(s @ s)
    if bias_correct:
        p = (s + 1.0) / 2.0
        n = np.asarray(triple.shots, dtype=float)
        val -= float(np.sum(np.where(n > 1, 4.0 * p * (1.0 - p) / (n - 1.0), 0.0)))
    return val


def a_hat(z_record: MeasurementRecord, flip_record: MeasurementRecord) -> float:
    """Average of the two paired survival probabilities (offset fixed at 1/2)."""
    if z_record.variant != "z" or flip_record.variant != "z_flip":
        raise ValueError("a_hat needs one z and one z_flip record")
    if z_record.sequence_id != flip_record.sequence_id:
        raise ValueError("a_hat records must come from the same sequence")
    p_zz = z_record.ones / z_record.shots
    p_zf = flip_record.ones / flip_record.shots
    return 0.5 * (p_zz - p_zf) + 0.5


def triple_variance(triples: Sequence[ExpectationTriple]) -> float:
    """Sum over bases of the across-sequence sample variance of the expectations."""
    if len(triples) < 2:
        raise ValueError("need at least two sequences")
    S = np.array([t.as_array() for t in triples])
    return float(S.var(axis=0, ddof=1).sum())


# ---------------------------------------------------------------- window data


@dataclass
class SequenceData:
    """Per-sequence counts for one operating point, variants pivoted to columns."""

    sequence_id: np.ndarray
    cycle: np.ndarray
    m: np.ndarray
    ones: np.ndarray  # (n, 4) in VARIANTS order
    shots: np.ndarray  # (n, 4)
    rejected: list = field(default_factory=list)

    def __len__(self):
        return int(self.m.size)

    @classmethod
    def from_table(cls, table: RecordTable, required: Sequence[str] = VARIANTS) -> "SequenceData":
        if len(table) == 0:
            z = np.zeros(0, dtype=np.int64)
            return cls(z, z, z, np.zeros((0, 4), np.int64), np.zeros((0, 4), np.int64))
        ids, inv = np.unique(table.sequence_id, return_inverse=True)
        n = ids.size
        col = np.array([_Z.get(v, -1) for v in table.variant])
        if np.any(col < 0):
            bad = sorted({str(v) for v in table.variant[col < 0]})
            raise ValueError(f"unknown variants {bad}")
        ones = np.full((n, 4), -1, dtype=np.int64)
        shots = np.full((n, 4), -1, dtype=np.int64)
        ones[inv, col] = table.ones
        shots[inv, col] = table.shots
        m = np.zeros(n, dtype=np.int64)
        m[inv] = table.m
        cycle = np.zeros(n, dtype=np.int64)
        cycle[inv] = table.cycle
        req = [_Z[v] for v in required]
        ok = np.all(shots[:, req] > 0, axis=1)
        rejected = []
        for sid in ids[~ok]:
            missing = [v for v in required if shots[np.searchsorted(ids, sid), _Z[v]] <= 0]
            rejected.append((int(sid), f"missing variants {missing}"))
        if rejected:
            warnings.warn(f"rejected {len(rejected)} incomplete sequences", RuntimeWarning, stacklevel=2)
        return cls(ids[ok], cycle[ok], m[ok], ones[ok], shots[ok], rejected)

    def lengths(self) -> np.ndarray:
        return np.unique(self.m)

    def groups(self) -> list[np.ndarray]:
        """Row indices of each length, in increasing ``m``."""
        return [np.flatnonzero(self.m == mm) for mm in self.lengths()]


@dataclass
class PerSequence:
    """Derived per-sequence quantities used by both pipelines."""

    s: np.ndarray  # (n, 4) expectations
    c: np.ndarray  # (n, 4) shot-noise variance of each expectation
    a: np.ndarray  # (n,) a_hat
    survival: np.ndarray  # (n,) z-variant survival
    purity: np.ndarray  # (n,) sum_k s_k^2 over x, y, z (corrected if requested)
    dsq: np.ndarray  # (n,) squared z half-difference (corrected if requested)


def per_sequence(data: SequenceData, bias_correct: bool = True) -> PerSequence:
    s = expectation(data.ones, data.shots)
    c = shot_variance(data.ones, data.shots) if bias_correct else np.zeros_like(s)
    zi, xi, yi, fi = _Z["z"], _Z["x"], _Z["y"], _Z["z_flip"]
    a = 0.5 * (s[:, zi] - s[:, fi]) / 2.0 + 0.5
    surv = data.ones[:, zi] / data.shots[:, zi]
    pur = (s[:, [xi, yi, zi]] ** 2 - c[:, [xi, yi, zi]]).sum(axis=1)
    d = 0.5 * (s[:, zi] - s[:, fi])
    dsq = d**2 - 0.25 * (c[:, zi] + c[:, fi])
    return PerSequence(s, c, a, surv, pur, dsq)


def b_hat_terms(ps: PerSequence, rows: np.ndarray) -> np.ndarray:
    """Per-sequence contributions whose mean is ``b_hat`` for one length.

    Expects ``rows`` of one length, ``n >= 2``. Shape follows ``rows``: pass a
    ``(B, n)`` index matrix for bootstrap resamples.
    """
    rows = np.asarray(rows)
    n = rows.shape[-1]
    if n < 2:
        raise ValueError("b_hat needs at least two sequences per length")
    q = ps.dsq[rows].copy()
    for k in (_Z["x"], _Z["y"]):
        sk = ps.s[rows, k]
        dev = sk - sk.mean(axis=-1, keepdims=True)
        q += n / (n - 1.0) * dev**2 - ps.c[rows, k]
    return q


def b_hat(data: SequenceData, bias_correct: bool = True) -> dict:
    """``b_hat(m)`` for every length with at least two sequences."""
    ps = per_sequence(data, bias_correct)
    out = {}
    for mm, rows in zip(data.lengths(), data.groups()):
        if rows.size < 2:
            warnings.warn(f"length {mm}: fewer than two sequences, skipped", RuntimeWarning, stacklevel=2)
            continue
        out[int(mm)] = float(b_hat_terms(ps, rows).mean())
    return out


def shift_term(ps: PerSequence, rows: Optional[np.ndarray] = None) -> np.ndarray:
    """Estimate of ``|t|^2`` from the paired z sum, debiased for its own noise.

    ``rows`` may be ``(n,)`` or ``(B, n)``; returns a scalar or ``(B,)``.
    """
    h = 0.5 * (ps.s[:, _Z["z"]] + ps.s[:, _Z["z_flip"]])
    h = h if rows is None else h[np.asarray(rows)]
    n = h.shape[-1]
    mean = h.mean(axis=-1)
    var_mean = h.var(axis=-1, ddof=1) / n if n > 1 else 0.0
    return np.maximum(mean**2 - var_mean, 0.0)


# ---------------------------------------------------------------- budgets


@dataclass
class ErrorBudget:
    epsilon: float
    epsilon_inc: float
    epsilon_coh: float
    p: float
    u: float
    p_se: float
    u_se: float
    ci: dict  # quantity -> (low, high), bootstrap when available
    delta_ci: dict  # quantity -> (low, high), first-order propagation
    diamond_lower: float
    diamond_upper: float
    status: str = "ok"
    notes: list = field(default_factory=list)

    def sigma(self, quantity: str) -> float:
        lo, hi = self.ci[quantity]
        return 0.5 * (hi - lo)


def diamond_bounds(epsilon: float, D: int = 2) -> tuple[float, float]:
    """Lower and upper bounds on half the diamond distance to the identity."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon {epsilon} outside [0, 1]")
    return (D + 1) / D * epsilon, math.sqrt(D * (D + 1) * epsilon)


def budget_parts(p, u):
    p = np.asarray(p, dtype=float)
    u = np.asarray(u, dtype=float)
    eps = 0.5 * (1.0 - p)
    inc = 0.5 * (1.0 - np.sqrt(u))
    return eps, inc, eps - inc


def budget_from_fits(p_fit: DecayFit, u_fit: DecayFit, n_sigma: float = 3.0) -> ErrorBudget:
    if not (p_fit.ok and u_fit.ok):
        raise ValueError("budget needs two successful fits")
    p, u = p_fit.rate, u_fit.rate
    eps, inc, coh = (float(v) for v in budget_parts(p, u))
    s_eps = 0.5 * p_fit.rate_se
    s_inc = u_fit.rate_se / (4.0 * math.sqrt(u))
    s_coh = math.hypot(s_eps, s_inc)
    delta = {
        "epsilon": (eps - s_eps, eps + s_eps),
        "epsilon_inc": (inc - s_inc, inc + s_inc),
        "epsilon_coh": (coh - s_coh, coh + s_coh),
    }
    status, notes = "ok", []
    if u > 1.0 + 1e-6:
        if u - 1.0 <= n_sigma * u_fit.rate_se:
            status = "superunitary"
            notes.append(f"u = {u:.8f} exceeds 1 within {n_sigma} sigma")
        else:
            status = "inconsistent"
            notes.append(f"u = {u:.8f} exceeds 1 by more than {n_sigma} sigma")
    if coh < -n_sigma * s_coh:
        status = "inconsistent"
        notes.append(f"epsilon_coh = {coh:.3e} below -{n_sigma} sigma")
    lo, hi = diamond_bounds(min(max(eps, 0.0), 1.0))
    return ErrorBudget(eps, inc, coh, p, u, p_fit.rate_se, u_fit.rate_se, dict(delta), delta, lo, hi, status, notes)


# ---------------------------------------------------------------- per-length series and fits


def _length_stats(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of the mean along the last axis."""
    n = values.shape[-1]
    mean = values.mean(axis=-1)
    var = values.var(axis=-1, ddof=1) / n if n > 1 else np.zeros_like(mean)
    return mean, var


def _weights(var: np.ndarray, n_min: int) -> Optional[np.ndarray]:
    """Inverse variances, smoothed across lengths.

    Raw per-length sample variances correlate with the per-length means when
    the sequence scatter is skewed (coherent errors), which biases weighted
    fits. A quadratic fit of log-variance against the length index removes
    most of that correlation while keeping the weighting profile.
    """
    if n_min < MIN_WEIGHTED:
        return None
    var = np.asarray(var, dtype=float)
    top = np.max(var, axis=-1, keepdims=True)
    if np.any(top <= 0):
        return None if var.ndim == 1 else np.ones_like(var)
    lv = np.log(np.maximum(var, 1e-6 * top))
    L = var.shape[-1]
    deg = 2 if L > 4 else L - 3
    if deg < 0:
        return np.exp(-lv)
    V = np.vander(np.arange(L, dtype=float), deg + 1)
    coef, *_ = np.linalg.lstsq(V, lv.T, rcond=None)
    return np.exp(-(V @ coef).T)


@dataclass
class SeriesPoints:
    m: np.ndarray
    p_values: np.ndarray
    p_var: np.ndarray
    u_values: np.ndarray
    u_var: np.ndarray
    n_min: int


def series_points(data: SequenceData, method: str, ps: PerSequence, groups=None) -> SeriesPoints:
    groups = data.groups() if groups is None else groups
    pv, pvar, uv, uvar = [], [], [], []
    for rows in groups:
        pv_i, pvar_i, uv_i, uvar_i = _group_stats(ps, rows, method)
        pv.append(pv_i)
        pvar.append(pvar_i)
        uv.append(uv_i)
        uvar.append(uvar_i)
    n_min = min((len(g) for g in groups), default=0)
    return SeriesPoints(data.lengths().astype(float), *(np.array(v) for v in (pv, pvar, uv, uvar)), n_min)


def _group_stats(ps: PerSequence, rows: np.ndarray, method: str):
    if method == OFFSET_FREE:
        pm, pv = _length_stats(ps.a[rows])
        um, uv = _length_stats(b_hat_terms(ps, rows))
    elif method == WITH_OFFSET:
        pm, pv = _length_stats(ps.survival[rows])
        um, uv = _length_stats(ps.purity[rows])
    else:
        raise ValueError(f"unknown method {method!r}")
    return pm, pv, um, uv


def _models(method: str) -> tuple[str, str]:
    return (A_HAT, B_HAT) if method == OFFSET_FREE else (P_WITH_OFFSET, PBAR_EQ12)


SHIFT_TOL = 1e-9
SHIFT_ITER = 50


def _walk(m, u, K):
    """``K (1 - u^m) / (1 - u)``, continuous at ``u = 1``."""
    u = np.asarray(u, dtype=float)[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(np.abs(1.0 - u) > 1e-12, -np.expm1(m * np.log(u)) / (1.0 - u), m)
    return np.asarray(K, dtype=float)[..., None] * g


def fit_unitarity(m, y, w, K: float = 0.0) -> DecayFit:
    """Zero-offset decay fit of ``y - K (1 - u^m)/(1 - u)``, iterated to a fixed point in ``u``."""
    fit = fit_decay(m, y, w, B_HAT, rate_max=np.inf)
    if K == 0.0 or not fit.ok:
        return fit
    for _ in range(SHIFT_ITER):
        prev = fit.rate
        fit = fit_decay(m, y - _walk(m, prev, K), w, B_HAT, rate_max=np.inf)
        if not fit.ok or abs(fit.rate - prev) <= SHIFT_TOL * prev:
            return fit
    return DecayFit(model=B_HAT, ok=False, message="shift correction did not converge")


def fit_series(sp: SeriesPoints, method: str, K: float = 0.0) -> tuple[DecayFit, DecayFit]:
    p_model, u_model = _models(method)
    p_fit = fit_decay(sp.m, sp.p_values, _weights(sp.p_var, sp.n_min), p_model, rate_max=np.inf)
    w_u = _weights(sp.u_var, sp.n_min)
    if method == OFFSET_FREE:
        u_fit = fit_unitarity(sp.m, sp.u_values, w_u, K)
    else:
        u_fit = fit_decay(sp.m, sp.u_values, w_u, u_model, rate_max=np.inf)
    return p_fit, u_fit


def _rate_check(fit: DecayFit, n_sigma: float = 3.0) -> DecayFit:
    """Rates above 1 are accepted only when within ``n_sigma`` of 1."""
    if fit.ok and fit.rate > 1.0 + 1e-6 and fit.rate - 1.0 > n_sigma * fit.rate_se:
        return DecayFit(model=fit.model, ok=False, message=f"rate {fit.rate:.8f} significantly above 1")
    return fit


# ---------------------------------------------------------------- bootstrap


@dataclass
class BootstrapResult:
    low: np.ndarray
    high: np.ndarray
    samples: np.ndarray  # (B, k), NaN rows for failed resamples
    n_failed: int
    low_confidence: bool = False


def bootstrap_ci(
    groups: Sequence[np.ndarray],
    statistic: Callable[[list], np.ndarray],
    resamples: int = 1000,
    seed: int = 0,
    level: float = CI_LEVEL,
) -> BootstrapResult:
    """Percentile bootstrap over whole sequences, stratified by length.

    ``statistic`` receives one ``(B, n_l)`` matrix of row indices per group and
    returns a ``(B, k)`` array. Intervals are widened by ``sqrt(10/n)`` and
    flagged low-confidence when a group has fewer than 10 sequences.
    """
    g = rngmod.stream(seed, rngmod.BOOTSTRAP)
    idx = [rows[g.integers(0, rows.size, size=(resamples, rows.size))] for rows in groups]
    samples = np.atleast_2d(np.asarray(statistic(idx), dtype=float))
    if samples.shape[0] != resamples:
        samples = samples.T
    good = np.all(np.isfinite(samples), axis=1)
    n_failed = int((~good).sum())
    alpha = 0.5 * (1.0 - level)
    if good.sum() < 2:
        nan = np.full(samples.shape[1], np.nan)
        return BootstrapResult(nan, nan, samples, n_failed, True)
    lo, hi = np.quantile(samples[good], [alpha, 1.0 - alpha], axis=0)
    n_min = min(r.size for r in groups)
    low_conf = n_min < MIN_BOOTSTRAP
    if low_conf:
        mid = np.median(samples[good], axis=0)
        widen = math.sqrt(MIN_BOOTSTRAP / max(n_min, 1))
        lo, hi = mid - widen * (mid - lo), mid + widen * (hi - mid)
    return BootstrapResult(lo, hi, samples, n_failed, low_conf)


def _budget_statistic(data, ps, method, p0, u0, correct_shift):
    p_model, u_model = _models(method)

    def stat(idx):
        cols = [_group_stats(ps, rows, method) for rows in idx]
        pm, pv, um, uv = (np.stack([c[k] for c in cols], axis=1) for k in range(4))
        n_min = min(rows.shape[1] for rows in idx)
        m = data.lengths().astype(float)
        Pp, okp = fit_decay_batch(m, pm, _weights(pv, n_min), p_model, p0=p0, rate_max=np.inf)
        wu = _weights(uv, n_min)
        Pu, oku = fit_decay_batch(m, um, wu, u_model, p0=u0, rate_max=np.inf)
        if correct_shift:
            K = shift_term(ps, np.concatenate(idx, axis=1))
            for _ in range(SHIFT_ITER):
                prev = Pu[:, 1]
                Pu, oku = fit_decay_batch(m, um - _walk(m, np.where(oku, prev, u0[1]), K), wu, u_model, p0=u0, rate_max=np.inf)
                with np.errstate(invalid="ignore"):
                    if np.all(~oku | (np.abs(Pu[:, 1] - prev) <= SHIFT_TOL * prev)):
                        break
        with np.errstate(invalid="ignore"):
            eps, inc, coh = budget_parts(Pp[:, 1], Pu[:, 1])
        out = np.column_stack([eps, inc, coh])
        out[~(okp & oku)] = np.nan
        return out

    return stat


# ---------------------------------------------------------------- window pipeline


@dataclass
class WindowFit:
    ok: bool
    method: str
    budget: Optional[ErrorBudget] = None
    p_fit: Optional[DecayFit] = None
    u_fit: Optional[DecayFit] = None
    series: Optional[SeriesPoints] = None
    bootstrap: Optional[BootstrapResult] = None
    message: str = ""
    rejected: list = field(default_factory=list)
    shift_sq: float = 0.0  # |t|^2 used by the random-walk correction


QUANTITIES = ("epsilon", "epsilon_inc", "epsilon_coh")


def estimate(
    data: SequenceData,
    method: str = OFFSET_FREE,
    bias_correct: bool = True,
    resamples: int = 1000,
    seed: int = 0,
    correct_shift: bool = True,
) -> WindowFit:
    """Fit one window: decays, budget, delta-method and bootstrap intervals.

    ``correct_shift`` applies the relaxation random-walk correction to the
    offset-free unitarity fit (ignored for ``with_offset``).
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if len(data) == 0:
        return WindowFit(False, method, message="no complete sequences", rejected=data.rejected)
    groups = data.groups()
    if min(g.size for g in groups) < 2:
        return WindowFit(False, method, message="need at least two sequences per length", rejected=data.rejected)
    ps = per_sequence(data, bias_correct)
    sp = series_points(data, method, ps, groups)
    correct_shift = correct_shift and method == OFFSET_FREE
    K = float(shift_term(ps)) if correct_shift else 0.0
    p_fit, u_fit = fit_series(sp, method, K)
    p_fit, u_fit = _rate_check(p_fit), _rate_check(u_fit)
    if not (p_fit.ok and u_fit.ok):
        msg = "; ".join(f"{name}: {f.message}" for name, f in (("p", p_fit), ("u", u_fit)) if not f.ok)
        return WindowFit(False, method, None, p_fit, u_fit, sp, message=msg, rejected=data.rejected)
    budget = budget_from_fits(p_fit, u_fit)
    boot = None
    if resamples > 0:
        p0 = [p_fit.amplitude, p_fit.rate] + ([p_fit.offset] if p_fit.offset is not None else [])
        u0 = [u_fit.amplitude, u_fit.rate] + ([u_fit.offset] if u_fit.offset is not None else [])
        boot = bootstrap_ci(groups, _budget_statistic(data, ps, method, p0, u0, correct_shift), resamples, seed)
        if np.all(np.isfinite(boot.low)):
            budget.ci = {q: (float(boot.low[i]), float(boot.high[i])) for i, q in enumerate(QUANTITIES)}
        if boot.low_confidence:
            budget.notes.append("bootstrap interval widened: fewer than 10 sequences per length")
        if boot.n_failed:
            budget.notes.append(f"{boot.n_failed} of {resamples} bootstrap fits failed")
    return WindowFit(True, method, budget, p_fit, u_fit, sp, boot, "ok", data.rejected, K)


def estimate_records(table: RecordTable, method: str = OFFSET_FREE, **kw) -> WindowFit:
    required = VARIANTS if method == OFFSET_FREE else ("z", "x", "y")
    return estimate(SequenceData.from_table(table, required), method, **kw)
