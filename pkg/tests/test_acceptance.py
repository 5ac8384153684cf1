"""Acceptance criteria 1-8, each at its stated tolerance.

Every criterion records one PASS/FAIL line; they are printed in the pytest
terminal summary, or directly when this file is run as a script.
"""

import functools
import itertools
import math
import time
from pathlib import Path

import numpy as np
import pytest

from pbsim import clifford
from pbsim import io as pio
from pbsim.cli import main as cli_main
from pbsim.estimator import OFFSET_FREE, WITH_OFFSET, diamond_bounds, estimate_records
from pbsim.noise import Miscalibration, OperatingPoint, ScenarioConfig, TLSParams, gate_channel
from pbsim.protocol import ExperimentPlan, simulate
from pbsim.qubit import channel_avg_infidelity, channel_unitarity
from pbsim.timeseries import WindowConfig, series_values, summarize, window_series

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
QUANTITIES = ("epsilon", "epsilon_inc", "epsilon_coh")
RESULTS = {}

pytestmark = pytest.mark.slow


def criterion(n, title):
    """Record PASS/FAIL for criterion ``n``; the wrapped test returns a detail string."""

    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                detail = fn(*args, **kwargs)
            except Exception as exc:
                RESULTS[n] = f"FAIL criterion {n} ({title}): {exc}".splitlines()[0]
                raise
            RESULTS[n] = f"PASS criterion {n} ({title}): {detail}"

        return run

    return wrap


def check(ok, message):
    if not ok:
        raise AssertionError(message)


def sigmas(value, truth, sigma):
    return abs(value - truth) / sigma


DEPOL_P = 0.998


def depolarizing_scenario():
    return ScenarioConfig(t1_base=math.inf, tphi_base=math.inf, depolarizing=DEPOL_P)


@criterion(1, "depolarizing oracle")
def test_criterion_1_depolarizing_oracle():
    t0 = time.perf_counter()
    records = simulate(ExperimentPlan(cycles=30, shots_per_variant=1000), depolarizing_scenario(), seed=0).records
    fit = estimate_records(records, resamples=1000, seed=0)
    elapsed = time.perf_counter() - t0
    check(fit.ok, fit.message)
    b = fit.budget
    z_eps = sigmas(b.epsilon, (1 - DEPOL_P) / 2, b.sigma("epsilon"))
    z_u = sigmas(b.u, DEPOL_P**2, b.u_se)
    lo, hi = b.ci["epsilon_coh"]
    detail = (
        f"eps={b.epsilon:.4e} ({z_eps:.2f} sigma), u={b.u:.6f} ({z_u:.2f} sigma), "
        f"eps_coh={b.epsilon_coh:.2e} CI=[{lo:.2e}, {hi:.2e}], {elapsed:.1f} s"
    )
    failures = [
        msg
        for ok, msg in (
            (z_eps <= 3, "epsilon beyond 3 sigma"),
            (z_u <= 3, "u beyond 3 sigma"),
            (lo <= 0 <= hi, "epsilon_coh CI excludes 0"),
            (elapsed < 120, "runtime over 2 min"),
        )
        if not ok
    ]
    check(not failures, "; ".join(failures) + f" ({detail})")
    return detail


@criterion(2, "unitary-error oracle")
def test_criterion_2_unitary_oracle():
    theta = 0.02
    sc = ScenarioConfig(t1_base=math.inf, tphi_base=math.inf, miscalibration=Miscalibration(overrotation=theta))
    records = simulate(ExperimentPlan(cycles=200), sc, seed=0).records
    fit = estimate_records(records, resamples=1000, seed=0)
    check(fit.ok, fit.message)
    b = fit.budget
    coh = (1 - math.cos(theta)) / 3
    z_u = sigmas(b.u, 1.0, b.u_se)
    z_coh = sigmas(b.epsilon_coh, coh, b.sigma("epsilon_coh"))
    z_inc = sigmas(b.epsilon_inc, 0.0, b.sigma("epsilon_inc"))
    check(z_u <= 3, f"u {b.u:.7f} is {z_u:.2f} sigma from 1")
    check(z_coh <= 3, f"epsilon_coh {b.epsilon_coh:.3e} is {z_coh:.2f} sigma from {coh:.3e}")
    check(z_inc <= 3, f"epsilon_inc {b.epsilon_inc:.2e} is {z_inc:.2f} sigma from 0")
    return (
        f"u={b.u:.7f} ({z_u:.2f} sigma), eps_coh={b.epsilon_coh:.3e} vs {coh:.3e} ({z_coh:.2f} sigma), "
        f"eps_inc={b.epsilon_inc:.1e} ({z_inc:.2f} sigma), status {b.status}"
    )


@criterion(3, "amplitude-damping oracle")
def test_criterion_3_amplitude_damping_oracle():
    sc = ScenarioConfig(t1_base=5e-6, tphi_base=math.inf, gate_time=25e-9)
    gamma = -math.expm1(-25e-9 / 5e-6)
    check(abs(gamma - 4.988e-3) < 5e-7, f"gamma {gamma}")
    eps_true = (3 - 2 * math.sqrt(1 - gamma) - (1 - gamma)) / 6
    u_true = (2 * (1 - gamma) + (1 - gamma) ** 2) / 3
    inc_true = (1 - math.sqrt(u_true)) / 2
    records = simulate(ExperimentPlan(cycles=30), sc, seed=0).records
    fit = estimate_records(records, resamples=1000, seed=0)
    check(fit.ok, fit.message)
    b = fit.budget
    z = {
        "epsilon": sigmas(b.epsilon, eps_true, b.sigma("epsilon")),
        "epsilon_inc": sigmas(b.epsilon_inc, inc_true, b.sigma("epsilon_inc")),
        "epsilon_coh": sigmas(b.epsilon_coh, eps_true - inc_true, b.sigma("epsilon_coh")),
    }
    for q, v in z.items():
        check(v <= 3, f"{q} {getattr(b, q):.4e} is {v:.2f} sigma off")
    return (
        f"eps={b.epsilon:.4e} vs {eps_true:.4e} ({z['epsilon']:.2f} sigma), "
        f"eps_inc={b.epsilon_inc:.4e} vs {inc_true:.4e} ({z['epsilon_inc']:.2f} sigma), "
        f"eps_coh={b.epsilon_coh:.2e} ({z['epsilon_coh']:.2f} sigma)"
    )


def table1_f1_scenario():
    return ScenarioConfig(
        tphi_base=1.0833e-5,
        operating_points=(OperatingPoint("f1", 4.6153),),
        miscalibration=Miscalibration(overrotation=0.0658),
        tls=TLSParams(4.616, 2e-4, 0.0, 1.7733e6),
    )


@criterion(4, "offset-elimination CV benefit")
def test_criterion_4_offset_elimination_cv():
    sc = table1_f1_scenario()
    n_windows = 200
    cycles = 15 * (n_windows - 1) + 30
    records = simulate(ExperimentPlan(cycles=cycles), sc, seed=11).records
    cv = {}
    for method in (OFFSET_FREE, WITH_OFFSET):
        series = window_series(records, WindowConfig(), method, resamples=0)["f1"]
        check(len(series) == n_windows, f"{len(series)} windows")
        n_failed = sum(not w.ok for w in series)
        check(n_failed == 0, f"{method}: {n_failed} failed windows")
        cv[method] = {q: summarize(series_values(series, q)).cv for q in QUANTITIES}
    ratios = {q: cv[OFFSET_FREE][q] / cv[WITH_OFFSET][q] for q in QUANTITIES}
    for q, r in ratios.items():
        check(r <= 0.5, f"CV ratio for {q} is {r:.3f}")
    return ", ".join(
        f"{q}: CV {cv[OFFSET_FREE][q]:.2f}% vs {cv[WITH_OFFSET][q]:.2f}% (ratio {ratios[q]:.3f})" for q in QUANTITIES
    )


@criterion(5, "frequency dependence")
def test_criterion_5_frequency_dependence():
    cfg = pio.load_config(CONFIGS / "table1_two_point.json")
    # analytic budgets of the tuned scenario
    analytic = {}
    for op in cfg.scenario.operating_points:
        ch = gate_channel(cfg.scenario, op)
        eps = channel_avg_infidelity(ch)
        inc = (1 - math.sqrt(channel_unitarity(ch))) / 2
        analytic[op.label] = (eps, inc, eps - inc)
    records = simulate(cfg.plan, cfg.scenario, cfg.seed).records
    wc = WindowConfig(cfg.analysis.window_n, cfg.analysis.overlap)
    series = window_series(records, wc, resamples=0)
    stats = {}
    for label, ws in series.items():
        check(all(w.ok for w in ws), f"{label}: failed windows")
        for w in ws:
            b = w.budget
            check(abs(b.epsilon - (b.epsilon_inc + b.epsilon_coh)) <= 1e-15, "budget identity broken")
        # overlapping windows are correlated: use the non-overlapping count
        n_eff = len(ws) * wc.step / wc.n
        stats[label] = {
            q: (series_values(ws, q).mean(), series_values(ws, q).std(ddof=1) / math.sqrt(n_eff)) for q in QUANTITIES
        }
    f1, f2 = stats["f1"], stats["f2"]
    d_coh = f1["epsilon_coh"][0] - f2["epsilon_coh"][0]
    s_coh = math.hypot(f1["epsilon_coh"][1], f2["epsilon_coh"][1])
    d_inc = abs(f1["epsilon_inc"][0] - f2["epsilon_inc"][0])
    d_eps = abs(f1["epsilon"][0] - f2["epsilon"][0])
    check(d_coh > 3 * s_coh, f"eps_coh difference {d_coh:.2e} is only {d_coh / s_coh:.1f} sigma")
    check(d_inc < d_eps, f"|d eps_inc| {d_inc:.2e} not below |d eps| {d_eps:.2e}")
    fmt = lambda lab: "/".join(f"{stats[lab][q][0]:.3e}" for q in QUANTITIES)
    ana = lambda lab: "/".join(f"{v:.3e}" for v in analytic[lab])
    return (
        f"f1 eps/inc/coh {fmt('f1')} (analytic {ana('f1')}), f2 {fmt('f2')} (analytic {ana('f2')}); "
        f"d eps_coh = {d_coh:.2e} = {d_coh / s_coh:.1f} sigma; |d eps_inc| {d_inc:.1e} < |d eps| {d_eps:.1e}"
    )


@criterion(6, "telegraph step detection")
def test_criterion_6_telegraph_step():
    cfg = pio.load_config(CONFIGS / "telegraph_step.json")
    tg = cfg.scenario.tls.telegraph
    flip_cycle = math.ceil(tg.forced_switches[0] / cfg.plan.cycle_period)
    res = simulate(cfg.plan, cfg.scenario, cfg.seed)
    wc = WindowConfig(cfg.analysis.window_n, cfg.analysis.overlap)
    series = window_series(res.records, wc, resamples=cfg.analysis.bootstrap_resamples, seed=cfg.seed)["f1"]
    before = [w for w in series if w.ok and w.end <= flip_cycle]
    after = [w for w in series if w.ok and w.start >= flip_cycle]
    straddle = [w for w in series if w.start < flip_cycle < w.end]
    check(before and after and straddle, "scenario does not bracket the flip")
    # the last window before and the first after the window containing the flip
    a, b = before[-1], after[0]
    step = b.value("epsilon_coh") - a.value("epsilon_coh")
    sig = math.hypot(a.sigma("epsilon_coh"), b.sigma("epsilon_coh"))
    check(step > 3 * sig, f"eps_coh step {step:.2e} is {step / sig:.1f} sigma")
    worst = min(
        (y.value("epsilon_coh") - x.value("epsilon_coh")) / math.hypot(x.sigma("epsilon_coh"), y.sigma("epsilon_coh"))
        for x in before
        for y in after
    )
    check(worst > 3, f"weakest before/after pair only {worst:.1f} sigma")

    cyc = np.array([s.cycle for s in res.t1_samples])
    freq = np.array([s.frequency for s in res.t1_samples])
    t1 = np.array([s.t1 for s in res.t1_samples])
    grid = np.unique(freq)

    def dip(lo, hi):
        sel = (cyc >= lo) & (cyc < hi)
        med = [np.nanmedian(t1[sel & (freq == f)]) for f in grid]
        return grid[int(np.nanargmin(med))]

    d0, d1 = dip(flip_cycle - 30, flip_cycle), dip(flip_cycle, flip_cycle + 30)
    step_f = grid[1] - grid[0]
    moved = d1 - d0
    check(abs(moved - tg.frequency_shift) <= step_f / 2 + 1e-9, f"dip moved {moved:.4f} GHz, expected {tg.frequency_shift}")
    return (
        f"flip at cycle {flip_cycle}; eps_coh {a.value('epsilon_coh'):.2e} -> {b.value('epsilon_coh'):.2e} "
        f"({step / sig:.1f} sigma, weakest pair {worst:.1f} sigma); T1 dip {d0:.4f} -> {d1:.4f} GHz"
    )


def _run_config_outputs(cfg_path, out):
    cfg = pio.load_config(cfg_path)
    assert cli_main(["simulate", "--config", str(cfg_path), "--out", str(out)]) == 0
    code = cli_main(["analyze", "--records", str(out / "records.csv"), "--config", str(cfg_path), "--out", str(out)])
    assert code == 0, f"analyze exited {code}"
    rep = ["report", "--estimates", str(out / "estimates.csv"), "--out", str(out / "report")]
    if cfg.plan.t1_scan is not None:
        rep += ["--t1-grid", str(out / "t1_grid.csv")]
    assert cli_main(rep) == 0
    return {p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}


@criterion(7, "structural properties")
def test_criterion_7_structural(tmp_path):
    from scipy.stats import chisquare

    # Clifford closure and inverses, exhaustively
    keys = {clifford.ROTATIONS[i].tobytes(): i for i in range(24)}
    check(len(keys) == 24, "24 distinct elements")
    for a, b in itertools.product(range(24), repeat=2):
        check(keys.get((clifford.ROTATIONS[a] @ clifford.ROTATIONS[b]).tobytes()) == clifford.MUL[a, b], "closure")
    for a in range(24):
        check(clifford.MUL[a, clifford.INV[a]] == 0 and clifford.MUL[clifford.INV[a], a] == 0, "inverse")
    # sampling uniformity
    counts = np.bincount(clifford.sample_indices(np.random.default_rng(2024), 24_000), minlength=24)
    pval = chisquare(counts).pvalue
    check(pval > 0.001, f"chi-square p = {pval:.2g}")
    # determinism of every shipped config
    configs = sorted(CONFIGS.glob("*.json"))
    for cfg_path in configs:
        first = _run_config_outputs(cfg_path, tmp_path / cfg_path.stem / "a")
        second = _run_config_outputs(cfg_path, tmp_path / cfg_path.stem / "b")
        check(first == second, f"{cfg_path.name}: outputs differ between runs")
    # diamond bounds arithmetic
    lo, hi = diamond_bounds(3.61e-3)
    check(abs(lo - 5.415e-3) < 1e-9 and abs(hi - 0.14718) < 1e-5, f"diamond bounds {lo}, {hi}")
    return (
        f"closure/inverse exhaustive ok; chi-square p = {pval:.3f}; {len(configs)} configs byte-identical; "
        f"diamond ({lo:.4e}, {hi:.5f})"
    )


@criterion(8, "bootstrap CI calibration")
def test_criterion_8_ci_calibration():
    reps, hits, failed, coh_hits = 200, 0, 0, 0
    truth = (1 - DEPOL_P) / 2
    sc = depolarizing_scenario()
    plan = ExperimentPlan(cycles=30, shots_per_variant=1000)
    for rep in range(reps):
        seed = 1000 + rep
        fit = estimate_records(simulate(plan, sc, seed=seed).records, resamples=1000, seed=seed)
        if not fit.ok:
            failed += 1
            continue
        lo, hi = fit.budget.ci["epsilon"]
        hits += lo <= truth <= hi
        lo, hi = fit.budget.ci["epsilon_coh"]
        coh_hits += lo <= 0.0 <= hi
    coverage = hits / reps
    check(failed == 0, f"{failed} repetitions failed to fit")
    check(0.60 <= coverage <= 0.76, f"coverage {coverage:.3f} outside [0.60, 0.76]")
    # reported for context: how often the epsilon_coh interval contains its true value 0
    return (
        f"68% interval covered epsilon = 1e-3 in {hits}/{reps} repetitions ({coverage:.1%}); "
        f"epsilon_coh interval contained 0 in {coh_hits}/{reps}"
    )

if __name__ == "__main__":
    import tempfile

    tests = [
        test_criterion_1_depolarizing_oracle,
        test_criterion_2_unitary_oracle,
        test_criterion_3_amplitude_damping_oracle,
        test_criterion_4_offset_elimination_cv,
        test_criterion_5_frequency_dependence,
        test_criterion_6_telegraph_step,
        lambda: test_criterion_7_structural(Path(tempfile.mkdtemp())),
        test_criterion_8_ci_calibration,
    ]
    for n, t in enumerate(tests, start=1):
        try:
            t()
        except Exception:
            pass
        print(RESULTS.get(n, f"FAIL criterion {n}: not run"))
