"""Metric tables: tab-delimited text plus JSON-lines records."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

CLASSIFICATION_METRICS = ("Pr_O", "Re_O", "Pr_M2", "Re_M2", "F1_M2")
REGRESSION_METRICS = ("FDE_O", "ADE_O", "FDE_M2", "ADE_M2")


def metrics_for(task):
    return CLASSIFICATION_METRICS if task == "toy-classification" else REGRESSION_METRICS


@dataclass
class MetricReport:
    task: str
    rows: list = field(default_factory=list)   # [(model name, {metric: value})]

    @property
    def metrics(self):
        return metrics_for(self.task)

    def add(self, name, values):
        self.rows.append((name, {m: float(values[m]) for m in self.metrics}))

    def row(self, name):
        for n, values in self.rows:
            if n == name:
                return values
        raise KeyError(name)


def emit_table(report):
    """``(table_text, jsonl_text)``; values in the table carry 4 decimals."""
    lines = ["\t".join(("model",) + report.metrics)]
    records = []
    for name, values in report.rows:
        lines.append("\t".join([name] + [f"{values[m]:.4f}" for m in report.metrics]))
        for m in report.metrics:
            records.append(json.dumps({"task": report.task, "model": name, "metric": m, "value": values[m]}))
    return "\n".join(lines) + "\n", "".join(r + "\n" for r in records)


def parse_jsonl(text, task=None):
    report = None
    order, values = [], {}
    for line in text.splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if report is None:
            report = MetricReport(rec["task"])
        if rec["model"] not in values:
            order.append(rec["model"])
            values[rec["model"]] = {}
        values[rec["model"]][rec["metric"]] = rec["value"]
    report = report or MetricReport(task)
    for name in order:
        report.add(name, values[name])
    return report


def write_report(report, path):
    """Write the table at ``path`` and the JSON-lines next to it (``.jsonl``)."""
    from pathlib import Path

    path = Path(path)
    table, jsonl = emit_table(report)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(table, encoding="utf-8")
    jsonl_path = path.with_suffix(".jsonl")
    jsonl_path.write_text(jsonl, encoding="utf-8")
    return path, jsonl_path
