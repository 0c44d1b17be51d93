"""Deterministic report serialization.

CSV cells render floats with 17 significant digits and JSON relies on
shortest round-trip representation, so identical runs produce byte-identical
artifacts regardless of platform worker counts. Column order is fixed per
table by construction (never by dict iteration over runtime-dependent data).
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def jsonable(obj):
    """Recursively convert numpy containers/scalars for json.dump."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if obj is None or isinstance(obj, (int, float, str)):
        return obj
    return str(obj)


@dataclass
class Table:
    name: str
    header: list
    rows: list = field(default_factory=list)

    def add(self, *row):
        if len(row) != len(self.header):
            raise ValueError(f"row width {len(row)} != header {len(self.header)}")
        self.rows.append(row)


@dataclass
class ExperimentReport:
    """Structured numeric record of one experiment run."""

    command: str
    config: dict
    version: str
    summary: dict = field(default_factory=dict)
    tables: list = field(default_factory=list)
    wall_time_s: float = 0.0
    error: dict = None

    def table(self, name: str, header: list) -> Table:
        t = Table(name, list(header))
        self.tables.append(t)
        return t

    def write(self, out_dir: Path, formats=("json", "csv")) -> list:
        """Write report.json and one CSV per table; returns written paths."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        if "json" in formats:
            payload = {
                "command": self.command,
                "config": jsonable(self.config),
                "version": self.version,
                "summary": jsonable(self.summary),
                "tables": [t.name for t in self.tables],
                "wall_time_s": float(self.wall_time_s),
                "error": jsonable(self.error),
            }
            path = out_dir / "report.json"
            with open(path, "w") as fh:
                json.dump(payload, fh, indent=2, sort_keys=True)
                fh.write("\n")
            written.append(path)
        if "csv" in formats:
            for t in self.tables:
                path = out_dir / f"{t.name}.csv"
                with open(path, "w") as fh:
                    fh.write(",".join(t.header) + "\n")
                    for row in t.rows:
                        fh.write(",".join(format_value(v) for v in row) + "\n")
                written.append(path)
        return written
