"""Command-line front end: ``simulate``, ``analyze`` and ``report``.

Exit codes: 0 success, 2 configuration error, 3 runtime or data error,
4 too few cycles for one analysis window. ``PBSIM_WORKERS`` sets the number
of worker processes.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import io as pio
from .protocol import simulate
from .timeseries import WindowConfig, histogram_fit, make_windows, summarize, window_series

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_INSUFFICIENT = 0, 2, 3, 4

HIST_COLUMNS = ("point_label", "quantity", "bin_index", "bin_low", "bin_high", "count", "fit_mu", "fit_sigma", "degenerate")
SERIES_COLUMNS = ("point_label", "quantity", "window_index", "midpoint_hours", "value", "ci_low", "ci_high", "fit_status")
GRID_COLUMNS = ("time_hours", "frequency_ghz", "t1_s")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("PBSIM_WORKERS", "1") or 1))
    except ValueError:
        raise CliError(EXIT_CONFIG, "PBSIM_WORKERS must be an integer") from None


def _out_dir(args, cfg=None) -> Path:
    out = args.out or (cfg.output_directory if cfg is not None else None)
    if not out:
        raise CliError(EXIT_CONFIG, "no output directory given (--out or output.directory)")
    return Path(out)


def _load_config(path):
    try:
        return pio.load_config(path)
    except pio.ConfigError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(args, cfg)
    result = simulate(cfg.plan, cfg.scenario, cfg.seed, workers=_workers())
    pio.atomic_write(out / "records.csv", pio.records_csv(result.records, cfg.sha256, cfg.seed))
    if cfg.plan.t1_scan is not None:
        pio.atomic_write(out / "t1_grid.csv", pio.t1_csv(result.t1_samples, cfg.sha256, cfg.seed))
    print(f"wrote {len(result.records)} records to {out / 'records.csv'}")
    return EXIT_OK


def histogram_rows(series_by_label: dict[str, dict[str, np.ndarray]], bins: int = 15):
    rows = []
    for label, by_q in series_by_label.items():
        for q in pio.QUANTITIES:
            v = by_q[q]
            v = v[np.isfinite(v)]
            if v.size < 2:
                continue
            h = histogram_fit(v, bins)
            for i, c in enumerate(h.counts):
                rows.append((label, q, i, h.edges[i], h.edges[i + 1], int(c), h.mu, h.sigma, h.degenerate))
    return rows


def summary_dict(series_by_label: dict[str, dict[str, np.ndarray]], meta: dict) -> dict:
    points = {}
    for label, by_q in series_by_label.items():
        cells = {}
        for q in pio.QUANTITIES:
            v = by_q[q]
            n_ok = int(np.isfinite(v).sum())
            cell = {"n_windows": int(v.size), "n_ok": n_ok}
            if n_ok >= 2:
                s = summarize(v)
                cell.update(
                    mean=s.mean, sd=s.sd, median=s.median, q25=s.q25, q75=s.q75, iqr=s.iqr,
                    cv_percent=s.cv if s.cv_defined else None, cv_defined=s.cv_defined,
                )
            elif n_ok == 1:
                cell.update(mean=float(v[np.isfinite(v)][0]))
            cells[q] = cell
        points[label] = cells
    return {"format_version": pio.FORMAT_VERSION, **meta, "points": points}


def _dump_json(obj) -> str:
    def clean(x):
        if isinstance(x, float) and not math.isfinite(x):
            return None
        if isinstance(x, dict):
            return {k: clean(v) for k, v in x.items()}
        if isinstance(x, list):
            return [clean(v) for v in x]
        return x

    return json.dumps(clean(obj), indent=2, sort_keys=False) + "\n"


def cmd_analyze(args) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(args, cfg)
    try:
        parsed = pio.read_records(args.records)
    except pio.FormatError as exc:
        raise CliError(EXIT_RUNTIME, str(exc)) from None
    if parsed.malformed:
        for lineno, reason in parsed.malformed[:20]:
            print(f"{args.records}:{lineno}: malformed row: {reason}", file=sys.stderr)
        if len(parsed.malformed) > 20:
            print(f"... {len(parsed.malformed) - 20} more malformed rows", file=sys.stderr)
        if parsed.malformed_fraction > pio.MALFORMED_LIMIT:
            raise CliError(
                EXIT_RUNTIME,
                f"{len(parsed.malformed)} of {parsed.total_rows} rows malformed (limit {pio.MALFORMED_LIMIT:.1%})",
            )
    table = parsed.table
    a = cfg.analysis
    wc = WindowConfig(a.window_n, a.overlap)
    n_cycles = int(table.cycle.max()) + 1 if len(table) else 0
    if not make_windows(n_cycles, wc):
        raise CliError(EXIT_INSUFFICIENT, f"insufficient cycles: {n_cycles} recorded, window needs {wc.n}")
    series = window_series(
        table, wc, a.method, a.bias_correct, a.bootstrap_resamples, seed=cfg.seed, workers=_workers()
    )
    meta = {"config_sha256": cfg.sha256, "seed": cfg.seed, "method": a.method}
    values = {
        label: {q: np.array([w.value(q) for w in ws]) for q in pio.QUANTITIES} for label, ws in series.items()
    }
    pio.atomic_write(out / "estimates.csv", pio.estimates_csv(series, meta))
    summary = summary_dict(values, meta)
    summary["n_windows"] = {label: len(ws) for label, ws in series.items()}
    summary["n_failed"] = {label: sum(not w.ok for w in ws) for label, ws in series.items()}
    summary["rejected_rows"] = len(parsed.malformed)
    pio.atomic_write(out / "summary.json", _dump_json(summary))
    pio.atomic_write(out / "histogram.csv", pio.csv_text(HIST_COLUMNS, histogram_rows(values), meta))
    n_win = sum(len(ws) for ws in series.values())
    n_fail = sum(summary["n_failed"].values())
    print(f"fitted {n_win} windows ({n_fail} failed); outputs in {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    out = _out_dir(args)
    try:
        rows = pio.read_estimates(args.estimates)
        grid = pio.read_t1_grid(args.t1_grid) if args.t1_grid else None
    except pio.FormatError as exc:
        raise CliError(EXIT_RUNTIME, str(exc)) from None
    series_rows = []
    values: dict[str, dict[str, list]] = {}
    for r in rows:
        label = r["point_label"]
        for q in pio.QUANTITIES:
            series_rows.append(
                (label, q, r["window_index"], r["midpoint_hours"], r[q], r[f"{q}_ci_low"], r[f"{q}_ci_high"], r["fit_status"])
            )
            values.setdefault(label, {k: [] for k in pio.QUANTITIES})[q].append(r[q])
    series_rows.sort(key=lambda t: (t[0], pio.QUANTITIES.index(t[1]), t[2]))
    arrays = {label: {q: np.array(v, dtype=float) for q, v in d.items()} for label, d in values.items()}
    pio.atomic_write(out / "series.csv", pio.csv_text(SERIES_COLUMNS, series_rows))
    pio.atomic_write(out / "histograms.csv", pio.csv_text(HIST_COLUMNS, histogram_rows(arrays)))
    if grid is not None:
        g = sorted((r["time_hours"], r["frequency_ghz"], r["t1_s"]) for r in grid)
        pio.atomic_write(out / "t1_grid.csv", pio.csv_text(GRID_COLUMNS, g))
    print(f"wrote report files to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pbsim", description="Purity benchmarking simulator and analysis")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate measurement records from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (default: output.directory in the config)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="fit window series and summaries from records")
    p.add_argument("--records", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("report", help="write plot-ready CSVs from estimates")
    p.add_argument("--estimates", required=True)
    p.add_argument("--t1-grid", dest="t1_grid")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
