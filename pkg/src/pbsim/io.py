"""Run configuration, CSV/JSON formats and atomic file output.

Every file carries a format version; readers reject unknown major versions.
CSV files start with ``# key: value`` comment lines, then a header row.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import jsonschema
import numpy as np

from .noise import (
    DriftParam,
    DriftSpec,
    Miscalibration,
    OperatingPoint,
    Recalibration,
    ScenarioConfig,
    TelegraphParams,
    TLSParams,
)
from .protocol import ExperimentPlan, RecordTable, T1Sample, T1ScanSpec

FORMAT_VERSION = "1.0"
MAJOR = FORMAT_VERSION.split(".")[0]
MALFORMED_LIMIT = 0.001

RECORD_COLUMNS = ("cycle", "wall_time_hours", "point_label", "m", "variant", "shots", "ones", "sequence_id")
T1_COLUMNS = ("cycle", "time_hours", "frequency_ghz", "t1_s", "t1_true_s")
QUANTITIES = ("epsilon", "epsilon_inc", "epsilon_coh")
ESTIMATE_COLUMNS = (
    ("window_index", "window_start_cycle", "window_end_cycle", "midpoint_hours", "point_label")
    + tuple(c for q in QUANTITIES for c in (q, f"{q}_ci_low", f"{q}_ci_high"))
    + ("diamond_lower", "diamond_upper", "p", "u", "fit_status", "message")
)


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class FormatError(ValueError):
    """Unreadable data file."""


# ---------------------------------------------------------------- config

_NUM = {"type": "number"}
_TIME = {"oneOf": [{"type": "number", "exclusiveMinimum": 0}, {"const": "inf"}]}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["seed", "scenario", "plan"],
    "additionalProperties": False,
    "properties": {
        "format_version": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "scenario": {
            "type": "object",
            "additionalProperties": False,
            "required": ["operating_points"],
            "properties": {
                "t1_base": _TIME,
                "tphi_base": {"oneOf": [_TIME, {"type": "null"}]},
                "gate_time": {"type": "number", "exclusiveMinimum": 0},
                "depolarizing": {"type": "number", "minimum": 0, "maximum": 1},
                "operating_points": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["label", "frequency"],
                        "properties": {"label": {"type": "string", "minLength": 1}, "frequency": _NUM},
                    },
                },
                "miscalibration": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "detuning": _NUM,
                        "overrotation": _NUM,
                        "axis": {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3},
                    },
                },
                "tls": {
                    "oneOf": [
                        {"type": "null"},
                        {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["f_center", "linewidth"],
                            "properties": {
                                "f_center": _NUM,
                                "linewidth": {"type": "number", "exclusiveMinimum": 0},
                                "gamma_peak": {"type": "number", "minimum": 0},
                                "coherent_pull": _NUM,
                                "telegraph": {
                                    "type": "object",
                                    "additionalProperties": False,
                                    "properties": {
                                        "rate_up": {"type": "number", "minimum": 0},
                                        "rate_down": {"type": "number", "minimum": 0},
                                        "frequency_shift": _NUM,
                                        "initial_level": {"enum": [0, 1]},
                                        "forced_switches": {"type": "array", "items": _NUM},
                                    },
                                },
                            },
                        },
                    ]
                },
                "drift": {
                    "oneOf": [
                        {"type": "null"},
                        {
                            "type": "object",
                            "additionalProperties": {
                                "type": "object",
                                "additionalProperties": False,
                                "required": ["step", "low", "high"],
                                "properties": {"step": {"type": "number", "minimum": 0}, "low": _NUM, "high": _NUM},
                            },
                        },
                    ]
                },
                "recalibrations": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["at_hours"],
                        "properties": {"at_hours": _NUM, "detuning": _NUM, "overrotation": _NUM},
                    },
                },
            },
        },
        "plan": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "M_set": {"type": "array", "minItems": 2, "items": {"type": "integer", "minimum": 1}},
                "cycles": {"type": "integer", "minimum": 0},
                "shots_per_variant": {"type": "integer", "minimum": 1},
                "cycle_period": {"type": "number", "exclusiveMinimum": 0},
                "repetition_time": {"type": "number", "minimum": 0},
                "points": {"oneOf": [{"type": "null"}, {"type": "array", "items": {"type": "string"}}]},
                "t1_scan": {
                    "oneOf": [
                        {"type": "null"},
                        {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["frequencies"],
                            "properties": {
                                "frequencies": {
                                    "oneOf": [
                                        {"type": "array", "minItems": 1, "items": _NUM},
                                        {
                                            "type": "object",
                                            "additionalProperties": False,
                                            "required": ["start", "stop", "count"],
                                            "properties": {
                                                "start": _NUM,
                                                "stop": _NUM,
                                                "count": {"type": "integer", "minimum": 1},
                                            },
                                        },
                                    ]
                                },
                                "delays": {
                                    "oneOf": [
                                        {"type": "null"},
                                        {"type": "array", "minItems": 3, "items": {"type": "number", "minimum": 0}},
                                    ]
                                },
                                "shots": {"type": "integer", "minimum": 1},
                                "noise_free": {"type": "boolean"},
                            },
                        },
                    ]
                },
            },
        },
        "analysis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "window_n": {"type": "integer", "minimum": 2},
                "overlap": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "bias_correct": {"type": "boolean"},
                "bootstrap_resamples": {"type": "integer", "minimum": 0},
                "method": {"enum": ["offset_free", "with_offset"]},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"directory": {"type": "string"}},
        },
    },
}


@dataclass(frozen=True)
class AnalysisConfig:
    window_n: int = 30
    overlap: float = 0.5
    bias_correct: bool = True
    bootstrap_resamples: int = 1000
    method: str = "offset_free"


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioConfig
    plan: ExperimentPlan
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    seed: int = 0
    output_directory: Optional[str] = None
    sha256: str = ""


def _time(v, default=None):
    if v is None:
        return default
    return math.inf if v == "inf" else float(v)


def _scenario(d: dict, seed: int) -> ScenarioConfig:
    mis = d.get("miscalibration", {})
    tls = d.get("tls")
    tls_obj = None
    if tls is not None:
        tg = tls.get("telegraph", {})
        tls_obj = TLSParams(
            f_center=float(tls["f_center"]),
            linewidth=float(tls["linewidth"]),
            gamma_peak=float(tls.get("gamma_peak", 0.0)),
            coherent_pull=float(tls.get("coherent_pull", 0.0)),
            telegraph=TelegraphParams(
                rate_up=float(tg.get("rate_up", 0.0)),
                rate_down=float(tg.get("rate_down", 0.0)),
                frequency_shift=float(tg.get("frequency_shift", 0.0)),
                initial_level=int(tg.get("initial_level", 0)),
                forced_switches=tuple(float(t) for t in tg.get("forced_switches", ())),
            ),
        )
    drift = d.get("drift")
    drift_obj = None
    if drift:
        drift_obj = DriftSpec({k: DriftParam(float(v["step"]), float(v["low"]), float(v["high"])) for k, v in drift.items()})
    return ScenarioConfig(
        t1_base=_time(d.get("t1_base"), 5e-6),
        tphi_base=_time(d.get("tphi_base")),
        gate_time=float(d.get("gate_time", 25e-9)),
        operating_points=tuple(OperatingPoint(p["label"], float(p["frequency"])) for p in d["operating_points"]),
        miscalibration=Miscalibration(
            float(mis.get("detuning", 0.0)),
            float(mis.get("overrotation", 0.0)),
            tuple(float(a) for a in mis.get("axis", (1.0, 0.0, 0.0))),
        ),
        depolarizing=float(d.get("depolarizing", 1.0)),
        tls=tls_obj,
        drift=drift_obj,
        recalibrations=tuple(
            Recalibration(float(r["at_hours"]), float(r.get("detuning", 0.0)), float(r.get("overrotation", 0.0)))
            for r in d.get("recalibrations", ())
        ),
        seed=seed,
    )


def _plan(d: dict) -> ExperimentPlan:
    scan = d.get("t1_scan")
    scan_obj = None
    if scan is not None:
        fr = scan["frequencies"]
        if isinstance(fr, dict):
            fr = np.linspace(fr["start"], fr["stop"], fr["count"]).tolist()
        delays = scan.get("delays")
        scan_obj = T1ScanSpec(
            frequencies=tuple(float(f) for f in fr),
            delays=None if delays is None else tuple(float(t) for t in delays),
            shots=int(scan.get("shots", 500)),
            noise_free=bool(scan.get("noise_free", False)),
        )
    kw = {k: d[k] for k in ("cycles", "shots_per_variant", "cycle_period", "repetition_time") if k in d}
    if "M_set" in d:
        kw["M_set"] = tuple(d["M_set"])
    if d.get("points") is not None:
        kw["points"] = tuple(d["points"])
    return ExperimentPlan(t1_scan=scan_obj, **kw)


def _check_version(version: Optional[str], what: str, error=FormatError):
    if version is None:
        return
    if str(version).split(".")[0] != MAJOR:
        raise error(f"{what}: unsupported format version {version!r} (expected {MAJOR}.x)")


def parse_config(data: dict) -> RunConfig:
    try:
        jsonschema.validate(data, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None
    _check_version(data.get("format_version"), "config", ConfigError)
    seed = int(data["seed"])
    try:
        scenario = _scenario(data["scenario"], seed)
        plan = _plan(data["plan"])
        plan.validate(scenario)
        analysis = AnalysisConfig(**data.get("analysis", {}))
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    canon = json.dumps(data, sort_keys=True, separators=(",", ":")).encode()
    return RunConfig(
        scenario,
        plan,
        analysis,
        seed,
        data.get("output", {}).get("directory"),
        hashlib.sha256(canon).hexdigest(),
    )


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return parse_config(data)


# ---------------------------------------------------------------- writing


def atomic_write(path, text: str) -> None:
    """Write ``text`` to a temporary file next to ``path``, then rename over it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def csv_text(columns: Iterable[str], rows: Iterable[Iterable], meta: Optional[dict] = None) -> str:
    buf = io.StringIO()
    meta = {"format_version": FORMAT_VERSION, **(meta or {})}
    for k, v in meta.items():
        buf.write(f"# {k}: {v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def records_csv(table: RecordTable, config_sha256: str = "", seed: int = 0) -> str:
    rows = zip(
        table.cycle, table.wall_time, table.point_label, table.m, table.variant, table.shots, table.ones, table.sequence_id
    )
    return csv_text(RECORD_COLUMNS, rows, {"config_sha256": config_sha256, "seed": seed})


def t1_csv(samples: Iterable[T1Sample], config_sha256: str = "", seed: int = 0) -> str:
    rows = ((s.cycle, s.wall_time, s.frequency, s.t1, s.t1_true) for s in samples)
    return csv_text(T1_COLUMNS, rows, {"config_sha256": config_sha256, "seed": seed})


def estimates_csv(series: dict, meta: Optional[dict] = None) -> str:
    rows = []
    for label in series:
        for w in series[label]:
            b = w.budget if w.ok else None
            row = [w.index, w.start, w.end, w.midpoint, label]
            for q in QUANTITIES:
                if b is None:
                    row += [math.nan] * 3
                else:
                    lo, hi = b.ci[q]
                    row += [getattr(b, q), lo, hi]
            if b is None:
                row += [math.nan] * 4 + ["failed", w.message]
            else:
                row += [b.diamond_lower, b.diamond_upper, b.p, b.u, b.status, "; ".join(b.notes)]
            rows.append(row)
    return csv_text(ESTIMATE_COLUMNS, rows, meta)


# ---------------------------------------------------------------- reading


@dataclass
class CsvData:
    meta: dict
    columns: list
    rows: list  # (line number, list of fields)


def read_csv(path, expected_columns: Optional[Iterable[str]] = None) -> CsvData:
    meta, columns, rows = {}, None, []
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                meta[key.strip()] = value.strip()
                continue
            if not line.strip():
                continue
            fields = next(csv.reader([line]))
            if columns is None:
                columns = fields
            else:
                rows.append((lineno, fields))
    if columns is None:
        raise FormatError(f"{path}: no header row")
    _check_version(meta.get("format_version"), str(path))
    if "format_version" not in meta:
        raise FormatError(f"{path}: missing format_version")
    if expected_columns is not None and tuple(columns) != tuple(expected_columns):
        raise FormatError(f"{path}: unexpected columns {columns}")
    return CsvData(meta, columns, rows)


@dataclass
class ParsedRecords:
    table: RecordTable
    meta: dict
    malformed: list  # (line number, reason)
    total_rows: int

    @property
    def malformed_fraction(self) -> float:
        return len(self.malformed) / self.total_rows if self.total_rows else 0.0


def read_records(path) -> ParsedRecords:
    data = read_csv(path, RECORD_COLUMNS)
    cols = {c: [] for c in RECORD_COLUMNS}
    bad = []
    for lineno, f in data.rows:
        try:
            if len(f) != len(RECORD_COLUMNS):
                raise ValueError(f"expected {len(RECORD_COLUMNS)} fields, got {len(f)}")
            vals = (int(f[0]), float(f[1]), f[2], int(f[3]), f[4], int(f[5]), int(f[6]), int(f[7]))
            if f[4] not in ("z", "x", "y", "z_flip"):
                raise ValueError(f"unknown variant {f[4]!r}")
            if not (vals[5] >= 1 and 0 <= vals[6] <= vals[5]):
                raise ValueError("ones must lie in [0, shots] with shots >= 1")
            if not math.isfinite(vals[1]):
                raise ValueError("wall time not finite")
        except ValueError as exc:
            bad.append((lineno, str(exc)))
            continue
        for c, v in zip(RECORD_COLUMNS, vals):
            cols[c].append(v)
    table = RecordTable(
        np.array(cols["cycle"], dtype=np.int64),
        np.array(cols["wall_time_hours"], dtype=float),
        np.array(cols["point_label"], dtype=object),
        np.array(cols["m"], dtype=np.int64),
        np.array(cols["variant"], dtype=object),
        np.array(cols["shots"], dtype=np.int64),
        np.array(cols["ones"], dtype=np.int64),
        np.array(cols["sequence_id"], dtype=np.int64),
    )
    return ParsedRecords(table, data.meta, bad, len(data.rows))


def read_estimates(path) -> list[dict]:
    data = read_csv(path, ESTIMATE_COLUMNS)
    out = []
    text_cols = {"point_label", "fit_status", "message"}
    int_cols = {"window_index", "window_start_cycle", "window_end_cycle"}
    for lineno, f in data.rows:
        if len(f) != len(ESTIMATE_COLUMNS):
            raise FormatError(f"{path}:{lineno}: expected {len(ESTIMATE_COLUMNS)} fields")
        row = {}
        try:
            for c, v in zip(ESTIMATE_COLUMNS, f):
                row[c] = v if c in text_cols else (int(v) if c in int_cols else float(v))
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        out.append(row)
    return out


def read_t1_grid(path) -> list[dict]:
    data = read_csv(path, T1_COLUMNS)
    out = []
    for lineno, f in data.rows:
        try:
            out.append({"cycle": int(f[0]), **{c: float(v) for c, v in zip(T1_COLUMNS[1:], f[1:])}})
        except (ValueError, IndexError) as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
    return out
