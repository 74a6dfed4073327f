"""
Module for rendering reports as Markdown tables, CSV, JSON or YAML
"""

import io
import os
import csv
import json
import math
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import yaml

import config
from planner.errors import ConfigError
from planner.workload import ContextCdf
from utils.catalog import load_yaml

logger = logging.getLogger(__name__)


@dataclass
class Table:
    """
    Named table; columns are (key, header, format spec) triples

    Rows hold raw values keyed by column key. The format spec only affects
    Markdown output; CSV/JSON/YAML carry the raw values.
    """
    name: str
    columns: Sequence[Tuple[str, str, str]]
    rows: List[Dict[str, Any]] = field(default_factory=list)

    def add_row(self, **values: Any):
        self.rows.append(values)

    def to_dict(self) -> Dict[str, Any]:
        keys = [c[0] for c in self.columns]
        return {"name": self.name, "rows": [{k: row.get(k) for k in keys} for row in self.rows]}


@dataclass
class Report:
    title: str
    tables: List[Table] = field(default_factory=list)
    meta: Dict[str, Any] = field(default_factory=dict)
    run_config: Optional[Dict[str, Any]] = None

    def table(self, name: str, columns: Sequence[Tuple[str, str, str]]) -> Table:
        t = Table(name, columns)
        self.tables.append(t)
        return t

    def to_dict(self) -> Dict[str, Any]:
        data = {
            "title": self.title,
            "meta": self.meta,
            "tables": [t.to_dict() for t in self.tables],
        }
        if self.run_config is not None:
            data["config"] = self.run_config
        return data


def _format_cell(value: Any, spec: str) -> str:
    if value is None:
        return "-"
    if isinstance(value, float) and math.isnan(value):
        return "n/a"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if spec and isinstance(value, (int, float)):
        return format(value, spec)
    return str(value)


def _plain(value: Any) -> Any:
    """JSON/YAML-safe scalar: NaN and infinities become None"""
    if isinstance(value, float) and (math.isnan(value) or math.isinf(value)):
        return None
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


class ReportSaver:
    """Renders reports and writes them to a file or returns the text"""

    def __init__(self, output_format: str = None):
        self.output_format = output_format or config.OUTPUT_FORMAT
        if self.output_format not in config.OUTPUT_FORMATS:
            raise ConfigError(f"unknown output format '{self.output_format}'")

    def render(self, report: Report) -> str:
        if self.output_format == "json":
            return self._render_json(report)
        if self.output_format == "yaml":
            return self._render_yaml(report)
        if self.output_format == "csv":
            return self._render_csv(report)
        return self._render_table(report)

    def save(self, report: Report, filepath: str) -> str:
        """Write a rendered report"""
        directory = os.path.dirname(filepath)
        if directory:
            os.makedirs(directory, exist_ok=True)
        try:
            with open(filepath, "w", encoding="utf-8", newline="") as f:
                f.write(self.render(report))
            logger.info(f"Saved {self.output_format.upper()} report: {filepath}")
            return filepath
        except OSError as e:
            logger.error(f"Failed to save report {filepath}: {e}")
            raise

    def _render_json(self, report: Report) -> str:
        return json.dumps(_plain(report.to_dict()), ensure_ascii=False, indent=2) + "\n"

    def _render_yaml(self, report: Report) -> str:
        return yaml.safe_dump(_plain(report.to_dict()), allow_unicode=True,
                              default_flow_style=False, sort_keys=False)

    def _render_csv(self, report: Report) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        for i, table in enumerate(report.tables):
            if i:
                buffer.write("\n")
            buffer.write(f"# {table.name}\n")
            keys = [c[0] for c in table.columns]
            writer.writerow(keys)
            for row in table.rows:
                writer.writerow(["" if row.get(k) is None else row.get(k) for k in keys])
        return buffer.getvalue()

    def _render_table(self, report: Report) -> str:
        lines = [f"# {report.title}", ""]
        for key, value in report.meta.items():
            if isinstance(value, (dict, list)):
                value = json.dumps(value, ensure_ascii=False)
            lines.append(f"- {key}: {value}")
        for table in report.tables:
            lines += ["", f"## {table.name}", ""]
            headers = [c[1] for c in table.columns]
            lines.append("| " + " | ".join(headers) + " |")
            lines.append("|" + "|".join("---" for _ in headers) + "|")
            for row in table.rows:
                cells = [_format_cell(row.get(key), spec) for key, _, spec in table.columns]
                lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"


def save_cdf(cdf: ContextCdf, filepath: str) -> str:
    """Export a CDF as JSON or YAML (by extension) with the points verbatim"""
    directory = os.path.dirname(filepath)
    if directory:
        os.makedirs(directory, exist_ok=True)
    try:
        with open(filepath, "w", encoding="utf-8") as f:
            if filepath.lower().endswith((".yaml", ".yml")):
                yaml.safe_dump(cdf.to_dict(), f, allow_unicode=True, default_flow_style=False, sort_keys=False)
            else:
                json.dump(cdf.to_dict(), f, ensure_ascii=False, indent=2)
        logger.info(f"Saved CDF: {filepath}")
        return filepath
    except OSError as e:
        logger.error(f"Failed to save CDF {filepath}: {e}")
        raise


def load_cdf(filepath: str) -> ContextCdf:
    """Import a CDF written by save_cdf"""
    data = load_yaml(filepath)
    try:
        return ContextCdf.from_dict(data)
    except ValueError as e:
        raise ConfigError(f"{filepath} is not a valid CDF: {e}") from e
