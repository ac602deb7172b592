"""Experiment reports: JSON, flat CSV, and static plots."""

from __future__ import annotations

import csv
import io
import json
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError
from .io import write_json

SCHEMA_VERSION = 1


def environment_fingerprint():
    import scipy
    import torch

    return {
        "python": platform.python_version(),
        "platform": platform.platform(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "torch": torch.__version__,
        "torch_threads": torch.get_num_threads(),
    }


@dataclass
class ExperimentReport:
    name: str
    config: dict
    metrics: dict = field(default_factory=dict)
    curves: list = field(default_factory=list)
    tables: list = field(default_factory=list)
    uaps: list = field(default_factory=list)
    datasets: dict = field(default_factory=dict)
    references: dict = field(default_factory=dict)
    wall_clock_seconds: float = 0.0
    environment: dict = field(default_factory=environment_fingerprint)
    schema_version: int = SCHEMA_VERSION

    def add_table(self, name, columns, rows):
        """``rows`` maps a row label to a list of values aligned with ``columns``."""
        self.tables.append({"name": name, "columns": list(columns),
                            "rows": {k: [float(v) for v in vals] for k, vals in rows.items()}})

    def table(self, name):
        for t in self.tables:
            if t["name"] == name:
                return t
        raise KeyError(name)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SCHEMA_VERSION:
            raise DataError(f"unsupported report schema_version {d.get('schema_version')!r}")
        return cls(**d)


def write_report(report, out_dir):
    out_dir = Path(out_dir)
    write_json(out_dir / "report.json", report.to_dict())
    (out_dir / "report.csv").write_text(report_csv(report))
    return out_dir / "report.json"


def load_report(path):
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    if not path.is_file():
        raise DataError(f"no report at {path}")
    return ExperimentReport.from_dict(json.loads(path.read_text()))


def report_rows(report):
    """Flat ``(section, name, key, value)`` rows covering every reported number."""
    rows = []
    for name, value in sorted(report.metrics.items()):
        rows.append(("metric", name, "", value))
    for curve in report.curves:
        for p in curve["points"]:
            rows.append(("curve", curve["kind"], p["level"], p["accuracy"]))
    for table in report.tables:
        for label, values in table["rows"].items():
            for col, v in zip(table["columns"], values):
                rows.append(("table", table["name"], f"{label}/{col}", v))
    for uap in report.uaps:
        for key in ("fooling_rate", "blank_prediction", "blank_confidence", "blank_target_confidence"):
            rows.append(("uap", str(uap["target_class"]), key, uap[key]))
    return rows


def report_csv(report):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["section", "name", "key", "value"])
    for section, name, key, value in report_rows(report):
        # repr keeps every float bit; bools and ints pass through unchanged
        writer.writerow([section, name, key, repr(value) if isinstance(value, float) else value])
    return buf.getvalue()


def _slug(text):
    return "".join(ch if ch.isalnum() else "_" for ch in str(text)).strip("_").lower()


def emit_plots(report, out_dir, fmt="png"):
    """One figure per curve and per table; returns the written paths."""
    if not report.curves and not report.tables:
        raise ConfigurationError("report has no curves or tables to plot")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for curve in report.curves:
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        levels = [p["level"] for p in curve["points"]]
        ax.plot(levels, [p["accuracy"] for p in curve["points"]], marker="o")
        ax.set_xlabel("distortion level")
        ax.set_ylabel("accuracy")
        ax.set_ylim(0, 1.02)
        ax.set_title(f"{curve['subject']}: {curve['kind']}")
        path = out_dir / f"curve_{_slug(curve['kind'])}.{fmt}"
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    for table in report.tables:
        cols, rows = table["columns"], table["rows"]
        fig, ax = plt.subplots(figsize=(max(4.5, 0.7 * len(cols) * max(1, len(rows))), 3.2))
        x = np.arange(len(cols))
        width = 0.8 / max(1, len(rows))
        for i, (label, values) in enumerate(rows.items()):
            ax.bar(x + i * width - 0.4 + width / 2, values, width, label=label)
        ax.set_xticks(x)
        ax.set_xticklabels(cols, rotation=30, ha="right")
        ax.set_title(table["name"])
        if len(rows) > 1:
            ax.legend(fontsize="small")
        path = out_dir / f"table_{_slug(table['name'])}.{fmt}"
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    return written
