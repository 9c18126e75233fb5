"""Analysis reports: one JSON document plus plot-ready CSV tables."""

import io
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from scalepal import __version__
from scalepal.exceptions import InputFileNotFound, ParseError
from scalepal.file_utils import PathLike, atomic_write_text

logger = logging.getLogger(__name__)


@dataclass
class ReportSection:
    """One operation's result and the inputs that produced it."""

    name: str
    operation: str
    inputs: Dict[str, Any]
    data: Dict[str, Any]

    def as_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "operation": self.operation,
            "inputs": self.inputs,
            "data": self.data,
        }


@dataclass
class AnalysisReport:
    """Everything a command produced, in emission order."""

    command: str
    version: str = __version__
    input_digests: Dict[str, str] = field(default_factory=dict)
    sections: List[ReportSection] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    tables: Dict[str, List[Dict[str, Any]]] = field(default_factory=dict)

    def add_section(self, name: str, operation: str, inputs: Mapping[str, Any],
                    data: Mapping[str, Any]) -> ReportSection:
        """Append a section; names must be unique within a report."""
        if self.section(name) is not None:
            raise ValueError(f"duplicate report section '{name}'")
        section = ReportSection(name, operation, dict(inputs), dict(data))
        self.sections.append(section)
        return section

    def add_table(self, name: str, records: Sequence[Mapping[str, Any]]) -> None:
        """Attach a CSV table written next to the report."""
        self.tables[name] = [dict(r) for r in records]

    def add_warnings(self, messages: Sequence[str]) -> None:
        """Record warnings, keeping first occurrences only."""
        for message in messages:
            if message not in self.warnings:
                self.warnings.append(message)

    def section(self, name: str) -> Optional[ReportSection]:
        """Look up a section by name."""
        for section in self.sections:
            if section.name == name:
                return section
        return None

    def as_dict(self) -> Dict[str, Any]:
        return {
            "tool": "scalepal",
            "version": self.version,
            "command": self.command,
            "input_digests": dict(self.input_digests),
            "sections": [s.as_dict() for s in self.sections],
            "warnings": list(self.warnings),
            "tables": sorted(self.tables),
        }


def to_jsonable(value: Any) -> Any:
    """
    Convert a result value into plain JSON types.

    Non-finite floats become None; numpy scalars and arrays, tuples and
    Enums are unwrapped.
    """
    if isinstance(value, Enum):
        return to_jsonable(value.value)
    if isinstance(value, Mapping):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def report_to_text(report: AnalysisReport) -> str:
    """Serialize a report deterministically."""
    payload = to_jsonable(report.as_dict())
    return json.dumps(payload, sort_keys=True, indent=2, allow_nan=False) + "\n"


def table_path(report_path: PathLike, name: str) -> Path:
    """Sibling CSV path <stem>.<name>.csv of a report."""
    path = Path(report_path)
    return path.with_name(f"{path.stem}.{name}.csv")


def table_to_text(records: Sequence[Mapping[str, Any]]) -> str:
    """Render records as CSV with columns in first-seen order."""
    columns: List[str] = []
    for record in records:
        for key in record:
            if key not in columns:
                columns.append(key)
    frame = pd.DataFrame([to_jsonable(r) for r in records], columns=columns)
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, na_rep="", lineterminator="\n", float_format="%.17g")
    return buffer.getvalue()


def write_report(report: AnalysisReport, path: PathLike) -> List[Path]:
    """
    Write the report JSON and its CSV tables atomically.

    Args:
        report: The report to write.
        path: Destination of the JSON document.

    Returns:
        Every path written, the JSON document first.
    """
    written = [atomic_write_text(path, report_to_text(report))]
    for name in sorted(report.tables):
        written.append(atomic_write_text(table_path(path, name), table_to_text(report.tables[name])))
    logger.info("wrote report %s with %d tables", path, len(report.tables))
    return written


def load_report(path: PathLike) -> Dict[str, Any]:
    """
    Read a report JSON document.

    Raises:
        InputFileNotFound: If the file does not exist.
        ParseError: If it is not a report.
    """
    path = Path(path)
    if not path.is_file():
        raise InputFileNotFound(str(path))
    try:
        with open(path, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
    except json.JSONDecodeError as e:
        raise ParseError(f"'{path}' is not valid JSON: {e}")
    if not isinstance(payload, dict) or "sections" not in payload:
        raise ParseError(f"'{path}' is not a scalepal report")
    return payload
