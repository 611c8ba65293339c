"""Verdict rows, CSV tables and the JSON run manifest."""

from dataclasses import dataclass, field, asdict
import csv
import io
import json
import math
import os
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


def fmt(v) -> str:
    """Float formatting that round-trips bit for bit."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return "" if v is None else str(v)


@dataclass
class Verdict:
    name: str
    estimate: float
    ci_lo: float
    ci_hi: float
    target: float | None
    passed: bool
    n: int
    runtime: float = 0.0
    note: str = ""

    def __post_init__(self):
        self.estimate = float(self.estimate)
        self.ci_lo = float(min(self.ci_lo, self.estimate))
        self.ci_hi = float(max(self.ci_hi, self.estimate))
        self.passed = bool(self.passed)
        self.n = int(self.n)

    def row(self) -> list:
        return [self.name, self.estimate, self.ci_lo, self.ci_hi, self.target, self.passed,
                self.n, self.note]


VERDICT_COLUMNS = ["name", "estimate", "ci_lo", "ci_hi", "target", "pass", "n", "note"]


def normal_ci(mean: float, se: float, z: float = 1.959963984540054):
    return mean - z * se, mean + z * se


def mean_verdict(name, samples, target, passed_fn, note="") -> Verdict:
    """Verdict for the sample mean; ``passed_fn(mean, se)`` decides the flag."""
    x = np.asarray(samples, dtype=float)
    m = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.inf
    lo, hi = normal_ci(m, se)
    return Verdict(name, m, lo, hi, target, passed_fn(m, se), x.size, note=note)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


@dataclass
class Battery:
    """Verdicts plus named tables (columns, rows) produced by one module."""
    verdicts: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)

    def extend(self, other: "Battery") -> "Battery":
        self.verdicts.extend(other.verdicts)
        for k, (cols, rows) in other.tables.items():
            if k in self.tables:
                self.tables[k][1].extend(rows)
            else:
                self.tables[k] = (cols, list(rows))
        return self


@dataclass
class ExperimentReport:
    experiment: str
    config_hash: str
    seed: int
    verdicts: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)   # name -> (columns, rows)
    wall_time: float = 0.0
    artifacts: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)


def write_report(report: ExperimentReport, out_dir) -> Path:
    """Write verdicts.csv, the extra tables and manifest.json; return the manifest path."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise OSError(f"output directory {out} is not writable")
    files = []
    tables = {"verdicts": (VERDICT_COLUMNS, [v.row() for v in report.verdicts])}
    tables.update(report.tables)
    for name, (cols, rows) in tables.items():
        p = out / f"{name}.csv"
        try:
            with open(p, "w", newline="", encoding="utf-8") as fh:
                fh.write(csv_text(cols, rows))
        except OSError as exc:
            raise OSError(f"failed writing {p}: {exc}") from exc
        files.append(p.name)
    report.artifacts = files
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "experiment": report.experiment,
        "config_hash": report.config_hash,
        "seed": int(report.seed),
        "wall_time": report.wall_time,
        "passed": report.passed,
        "artifacts": files,
        "verdicts": [asdict(v) | {"runtime": 0.0} for v in report.verdicts],
    }
    mp = out / "manifest.json"
    try:
        mp.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    except OSError as exc:
        raise OSError(f"failed writing {mp}: {exc}") from exc
    return mp


def read_manifest(path) -> ExperimentReport:
    data = json.loads(Path(path).read_text())
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported manifest schema {data.get('schema_version')!r}")
    rep = ExperimentReport(data["experiment"], data["config_hash"], data["seed"],
                           [Verdict(**v) for v in data["verdicts"]],
                           wall_time=data["wall_time"], artifacts=list(data["artifacts"]))
    return rep
