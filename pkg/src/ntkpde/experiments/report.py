"""Study reports: tables as CSV, verdicts and provenance as one JSON summary."""

from __future__ import annotations

import csv
import json
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PASS, FAIL, NA = "pass", "fail", "n/a"


def _plain(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    return v


@dataclass
class Verdict:
    criterion: str
    measured: object
    tolerance: str
    status: str

    @classmethod
    def check(cls, criterion, measured, tolerance, ok) -> "Verdict":
        return cls(criterion, _plain(measured), tolerance, PASS if ok else FAIL)

    @classmethod
    def not_applicable(cls, criterion, measured, reason) -> "Verdict":
        return cls(criterion, _plain(measured), reason, NA)

    def line(self) -> str:
        return f"[{self.status.upper():4}] {self.criterion}: measured={self.measured} ({self.tolerance})"


@dataclass
class StudyReport:
    name: str
    config_hash: str
    seeds: dict
    tables: dict = field(default_factory=dict)
    verdicts: list = field(default_factory=list)
    notices: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v.status != FAIL for v in self.verdicts)

    def add_row(self, table: str, **row) -> None:
        self.tables.setdefault(table, []).append({k: _plain(v) for k, v in row.items()})

    def verdict(self, name: str) -> Verdict:
        for v in self.verdicts:
            if v.criterion == name:
                return v
        raise KeyError(name)

    def summary(self) -> dict:
        return {
            "study": self.name,
            "passed": self.passed,
            "verdicts": [v.__dict__ for v in self.verdicts],
            "metrics": _plain(self.metrics),
            "notices": list(self.notices),
            "tables": sorted(self.tables),
            "provenance": {
                "config_hash": self.config_hash,
                "seeds": _plain(self.seeds),
                "versions": {"python": platform.python_version(), "numpy": np.__version__},
            },
        }

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, rows in self.tables.items():
            with open(out / f"{name}.csv", "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
                writer.writeheader()
                writer.writerows(rows)
        path = out / "summary.json"
        path.write_text(json.dumps(self.summary(), indent=2, sort_keys=True))
        return path
